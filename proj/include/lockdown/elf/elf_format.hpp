// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw on-disk ELF layout: constants, little-endian field access and the
// per-class record sizes. Only the subset needed for symbol/relocation
// inventory is described here.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lockdown/error.hpp"

namespace lockdown::elf {

inline constexpr std::uint8_t ELFCLASS32 = 1;
inline constexpr std::uint8_t ELFCLASS64 = 2;
inline constexpr std::uint8_t ELFDATA2LSB = 1;

inline constexpr std::uint16_t ET_DYN = 3;
inline constexpr std::uint16_t EM_386 = 3;
inline constexpr std::uint16_t EM_X86_64 = 62;

inline constexpr std::uint32_t SHT_NULL = 0;
inline constexpr std::uint32_t SHT_PROGBITS = 1;
inline constexpr std::uint32_t SHT_SYMTAB = 2;
inline constexpr std::uint32_t SHT_STRTAB = 3;
inline constexpr std::uint32_t SHT_RELA = 4;
inline constexpr std::uint32_t SHT_NOBITS = 8;
inline constexpr std::uint32_t SHT_REL = 9;
inline constexpr std::uint32_t SHT_DYNSYM = 11;

inline constexpr std::uint64_t SHF_WRITE = 0x1;
inline constexpr std::uint64_t SHF_ALLOC = 0x2;
inline constexpr std::uint64_t SHF_EXECINSTR = 0x4;

inline constexpr std::uint16_t SHN_UNDEF = 0;
inline constexpr std::uint16_t SHN_LORESERVE = 0xff00;
inline constexpr std::uint16_t SHN_ABS = 0xfff1;
inline constexpr std::uint16_t SHN_COMMON = 0xfff2;

inline constexpr std::uint8_t STB_LOCAL = 0;
inline constexpr std::uint8_t STB_GLOBAL = 1;
inline constexpr std::uint8_t STB_WEAK = 2;

inline constexpr std::uint8_t STT_NOTYPE = 0;
inline constexpr std::uint8_t STT_OBJECT = 1;
inline constexpr std::uint8_t STT_FUNC = 2;
inline constexpr std::uint8_t STT_SECTION = 3;
inline constexpr std::uint8_t STT_FILE = 4;

inline constexpr std::uint8_t STV_DEFAULT = 0;
inline constexpr std::uint8_t STV_PROTECTED = 3;

// i386 and x86-64 share these two numbers.
inline constexpr std::uint32_t R_JMP_SLOT = 7;
inline constexpr std::uint32_t R_RELATIVE = 8;

inline constexpr std::size_t plt_entry_size = 16;
inline constexpr char instruction_boundary_section[] = ".insn_boundaries";

inline std::uint16_t read_le16(std::span<const std::uint8_t> bytes, std::size_t at) {
    return static_cast<std::uint16_t>(bytes[at] | (bytes[at + 1] << 8));
}

inline std::uint32_t read_le32(std::span<const std::uint8_t> bytes, std::size_t at) {
    return static_cast<std::uint32_t>(bytes[at]) | (static_cast<std::uint32_t>(bytes[at + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[at + 2]) << 16) | (static_cast<std::uint32_t>(bytes[at + 3]) << 24);
}

inline std::uint64_t read_le64(std::span<const std::uint8_t> bytes, std::size_t at) {
    return static_cast<std::uint64_t>(read_le32(bytes, at)) |
           (static_cast<std::uint64_t>(read_le32(bytes, at + 4)) << 32);
}

inline void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void write_le32(std::span<std::uint8_t> out, std::size_t at, std::uint32_t v) {
    for (std::size_t i = 0; i < 4; ++i) {
        out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

// Field offsets of the two ELF classes. Everything the parser reads is
// expressed through these so one template covers both.
struct Elf32Layout {
    static constexpr std::uint8_t elf_class = ELFCLASS32;
    static constexpr std::size_t ehdr_size = 52;
    static constexpr std::size_t shdr_size = 40;
    static constexpr std::size_t sym_size = 16;
    static constexpr std::size_t rel_size = 8;
    static constexpr std::size_t rela_size = 12;
    static constexpr std::size_t word_size = 4;

    static std::uint64_t word(std::span<const std::uint8_t> b, std::size_t at) { return read_le32(b, at); }

    struct Header {
        std::uint64_t shoff;
        std::uint16_t shentsize, shnum, shstrndx, machine;
    };
    static Header header(std::span<const std::uint8_t> b) {
        return {read_le32(b, 32), read_le16(b, 46), read_le16(b, 48), read_le16(b, 50), read_le16(b, 18)};
    }

    struct SectionHeader {
        std::uint32_t name, type;
        std::uint64_t flags, addr, offset, size;
        std::uint32_t link, info;
        std::uint64_t entsize;
    };
    static SectionHeader section(std::span<const std::uint8_t> b, std::size_t at) {
        return {read_le32(b, at),      read_le32(b, at + 4),  read_le32(b, at + 8),
                read_le32(b, at + 12), read_le32(b, at + 16), read_le32(b, at + 20),
                read_le32(b, at + 24), read_le32(b, at + 28), read_le32(b, at + 36)};
    }

    struct Symbol {
        std::uint32_t name;
        std::uint64_t value, size;
        std::uint8_t info, other;
        std::uint16_t shndx;
    };
    static Symbol symbol(std::span<const std::uint8_t> b, std::size_t at) {
        return {read_le32(b, at), read_le32(b, at + 4), read_le32(b, at + 8), b[at + 12], b[at + 13],
                read_le16(b, at + 14)};
    }

    struct Reloc {
        std::uint64_t offset;
        std::uint32_t sym, type;
        std::int64_t addend;
    };
    static Reloc rel(std::span<const std::uint8_t> b, std::size_t at, bool with_addend) {
        const std::uint32_t info = read_le32(b, at + 4);
        const std::int64_t addend = with_addend ? static_cast<std::int32_t>(read_le32(b, at + 8)) : 0;
        return {read_le32(b, at), info >> 8, info & 0xff, addend};
    }
};

struct Elf64Layout {
    static constexpr std::uint8_t elf_class = ELFCLASS64;
    static constexpr std::size_t ehdr_size = 64;
    static constexpr std::size_t shdr_size = 64;
    static constexpr std::size_t sym_size = 24;
    static constexpr std::size_t rel_size = 16;
    static constexpr std::size_t rela_size = 24;
    static constexpr std::size_t word_size = 8;

    static std::uint64_t word(std::span<const std::uint8_t> b, std::size_t at) { return read_le64(b, at); }

    using Header = Elf32Layout::Header;
    static Header header(std::span<const std::uint8_t> b) {
        return {read_le64(b, 40), read_le16(b, 58), read_le16(b, 60), read_le16(b, 62), read_le16(b, 18)};
    }

    using SectionHeader = Elf32Layout::SectionHeader;
    static SectionHeader section(std::span<const std::uint8_t> b, std::size_t at) {
        return {read_le32(b, at),      read_le32(b, at + 4),  read_le64(b, at + 8),
                read_le64(b, at + 16), read_le64(b, at + 24), read_le64(b, at + 32),
                read_le32(b, at + 40), read_le32(b, at + 44), read_le64(b, at + 56)};
    }

    using Symbol = Elf32Layout::Symbol;
    static Symbol symbol(std::span<const std::uint8_t> b, std::size_t at) {
        return {read_le32(b, at), read_le64(b, at + 8), read_le64(b, at + 16), b[at + 4], b[at + 5],
                read_le16(b, at + 6)};
    }

    using Reloc = Elf32Layout::Reloc;
    static Reloc rel(std::span<const std::uint8_t> b, std::size_t at, bool with_addend) {
        const std::uint64_t info = read_le64(b, at + 8);
        const std::int64_t addend = with_addend ? static_cast<std::int64_t>(read_le64(b, at + 16)) : 0;
        return {read_le64(b, at), static_cast<std::uint32_t>(info >> 32), static_cast<std::uint32_t>(info), addend};
    }
};

} // namespace lockdown::elf
