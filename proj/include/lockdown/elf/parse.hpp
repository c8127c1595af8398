// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lockdown/elf/elf_format.hpp"
#include "lockdown/elf/module_image.hpp"
#include "lockdown/error.hpp"

namespace lockdown {

struct ParseOptions {
    // ELF32 little-endian is the mandatory format; 64-bit objects are only
    // accepted when this capability is switched on.
    bool allow_elf64 = false;
};

namespace elf::detail {

template <class Layout>
class Parser {
  public:
    Parser(std::span<const std::uint8_t> bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

    ModuleImage run() {
        if (bytes_.size() < Layout::ehdr_size) {
            throw Error(ErrorKind::malformed_header, path_ + ": file shorter than the ELF header");
        }
        const auto hdr = Layout::header(bytes_);
        if (hdr.shnum == 0) {
            throw Error(ErrorKind::malformed_header, path_ + ": no section header table");
        }
        if (hdr.shentsize != Layout::shdr_size) {
            throw Error(ErrorKind::malformed_header, path_ + ": unexpected e_shentsize " + std::to_string(hdr.shentsize));
        }
        if (hdr.shoff > bytes_.size() || (bytes_.size() - hdr.shoff) / Layout::shdr_size < hdr.shnum) {
            throw Error(ErrorKind::truncated_section, path_ + ": section header table runs past end of file");
        }
        if (hdr.shstrndx >= hdr.shnum) {
            throw Error(ErrorKind::malformed_header, path_ + ": e_shstrndx out of range");
        }
        for (std::size_t i = 0; i < hdr.shnum; ++i) {
            headers_.push_back(Layout::section(bytes_, hdr.shoff + i * Layout::shdr_size));
        }
        for (std::size_t i = 0; i < headers_.size(); ++i) {
            const auto& sh = headers_[i];
            if (sh.type != SHT_NOBITS && sh.type != SHT_NULL &&
                (sh.offset > bytes_.size() || bytes_.size() - sh.offset < sh.size)) {
                throw Error(ErrorKind::truncated_section, path_ + ": section #" + std::to_string(i) + " contents run past end of file");
            }
        }
        shstrndx_ = hdr.shstrndx;

        ModuleImage m;
        m.path = path_;
        m.elf_class = Layout::elf_class == ELFCLASS64 ? 64 : 32;
        read_sections(m);
        read_symbols(m);
        read_relocations(m);
        read_boundaries(m);
        m.stripped = std::none_of(m.symbols.begin(), m.symbols.end(),
                                  [](const SymbolRecord& s) { return s.origin == SymbolOrigin::symtab; });
        return m;
    }

  private:
    std::span<const std::uint8_t> contents(std::size_t index) const {
        const auto& sh = headers_[index];
        if (sh.type == SHT_NOBITS || sh.type == SHT_NULL) {
            return {};
        }
        return bytes_.subspan(sh.offset, sh.size);
    }

    std::string string_at(std::size_t strtab_index, std::uint32_t offset, std::string_view what) const {
        if (strtab_index >= headers_.size() || headers_[strtab_index].type != SHT_STRTAB) {
            throw Error(ErrorKind::malformed_header, path_ + ": " + std::string(what) + " links to a non-string table");
        }
        const auto table = contents(strtab_index);
        if (offset >= table.size()) {
            throw Error(ErrorKind::truncated_section, path_ + ": " + std::string(what) + " name offset outside string table");
        }
        const auto* begin = reinterpret_cast<const char*>(table.data()) + offset;
        const auto* nul = static_cast<const char*>(std::memchr(begin, 0, table.size() - offset));
        if (nul == nullptr) {
            throw Error(ErrorKind::truncated_section, path_ + ": unterminated string in " + std::string(what));
        }
        return {begin, nul};
    }

    void read_sections(ModuleImage& m) {
        names_.resize(headers_.size());
        for (std::size_t i = 1; i < headers_.size(); ++i) {
            const auto& sh = headers_[i];
            names_[i] = string_at(shstrndx_, sh.name, "section header");
            Section s;
            s.name = names_[i];
            s.file_offset = sh.offset;
            s.virtual_offset = sh.addr;
            s.size = sh.size;
            s.alloc = (sh.flags & SHF_ALLOC) != 0;
            s.exec = (sh.flags & SHF_EXECINSTR) != 0;
            s.write = (sh.flags & SHF_WRITE) != 0;
            if (s.alloc && sh.type != SHT_NOBITS) {
                const auto data = contents(i);
                s.bytes.assign(data.begin(), data.end());
            }
            m.sections.push_back(std::move(s));
        }
    }

    struct RawSymbol {
        std::string name;
        bool defined = false;
    };

    std::vector<RawSymbol> read_table(std::size_t index, SymbolOrigin origin, ModuleImage& m,
                                      const std::vector<std::string>* exports) {
        const auto& sh = headers_[index];
        if (sh.entsize != 0 && sh.entsize != Layout::sym_size) {
            throw Error(ErrorKind::malformed_header, path_ + ": " + names_[index] + " has unexpected entry size");
        }
        const auto data = contents(index);
        std::vector<RawSymbol> raw;
        for (std::size_t at = 0; at + Layout::sym_size <= data.size(); at += Layout::sym_size) {
            const auto sym = Layout::symbol(data, at);
            RawSymbol r;
            r.name = string_at(sh.link, sym.name, names_[index]);
            r.defined = sym.shndx != SHN_UNDEF;
            raw.push_back(r);

            const std::uint8_t type = sym.info & 0xf;
            const std::uint8_t bind = sym.info >> 4;
            if (!r.defined || r.name.empty() || type == STT_SECTION || type == STT_FILE) {
                continue;
            }
            SymbolRecord rec;
            rec.name = r.name;
            rec.value = sym.value;
            rec.size = sym.size;
            rec.kind = type == STT_FUNC ? SymbolKind::function : type == STT_OBJECT ? SymbolKind::object : SymbolKind::other;
            rec.binding = bind == STB_LOCAL ? SymbolBinding::local : bind == STB_WEAK ? SymbolBinding::weak : SymbolBinding::global;
            rec.origin = origin;
            const std::uint8_t vis = sym.other & 0x3;
            const bool visible = rec.binding != SymbolBinding::local && (vis == STV_DEFAULT || vis == STV_PROTECTED);
            if (origin == SymbolOrigin::dynsym) {
                rec.visibility = visible ? SymbolVisibility::exported : SymbolVisibility::hidden;
            } else {
                const bool listed = exports != nullptr && std::find(exports->begin(), exports->end(), rec.name) != exports->end();
                rec.visibility = visible && listed ? SymbolVisibility::exported : SymbolVisibility::hidden;
            }
            m.symbols.push_back(std::move(rec));
        }
        return raw;
    }

    void read_symbols(ModuleImage& m) {
        for (std::size_t i = 1; i < headers_.size(); ++i) {
            if (headers_[i].type != SHT_DYNSYM) {
                continue;
            }
            dynsym_index_ = i;
            dynsym_ = read_table(i, SymbolOrigin::dynsym, m, nullptr);
            for (const auto& r : dynsym_) {
                if (!r.defined && !r.name.empty() && !m.imports_symbol(r.name)) {
                    m.imports.push_back(r.name);
                }
            }
            for (const auto& s : m.symbols) {
                if (s.visibility == SymbolVisibility::exported && !m.exports_symbol(s.name)) {
                    m.exports.push_back(s.name);
                }
            }
            break;
        }
        for (std::size_t i = 1; i < headers_.size(); ++i) {
            if (headers_[i].type == SHT_SYMTAB) {
                read_table(i, SymbolOrigin::symtab, m, &m.exports);
                break;
            }
        }
    }

    void read_relocations(ModuleImage& m) {
        const Section* plt_sec = m.find_section(".plt.sec");
        const Section* plt = m.find_section(".plt");
        std::size_t slot = 0;
        for (std::size_t i = 1; i < headers_.size(); ++i) {
            const auto& sh = headers_[i];
            if (sh.type != SHT_REL && sh.type != SHT_RELA) {
                continue;
            }
            if (dynsym_index_ == 0 || sh.link != dynsym_index_) {
                continue; // static relocations of object files are not part of the loader's view
            }
            const bool rela = sh.type == SHT_RELA;
            const std::size_t entsize = rela ? Layout::rela_size : Layout::rel_size;
            const auto data = contents(i);
            for (std::size_t at = 0; at + entsize <= data.size(); at += entsize) {
                const auto raw = Layout::rel(data, at, rela);
                Relocation r;
                r.offset = raw.offset;
                r.raw_type = raw.type;
                r.kind = raw.type == R_RELATIVE ? RelocationKind::relative
                         : raw.type == R_JMP_SLOT ? RelocationKind::jump_slot
                                                  : RelocationKind::other;
                r.addend = raw.addend;
                if (!rela) {
                    if (auto word = m.read_word(raw.offset)) {
                        r.addend = Layout::word_size == 4 ? static_cast<std::int32_t>(*word) : static_cast<std::int64_t>(*word);
                    }
                }
                if (raw.sym != 0) {
                    if (raw.sym >= dynsym_.size()) {
                        throw Error(ErrorKind::malformed_header, path_ + ": relocation in " + names_[i] + " references symbol #" +
                                                                     std::to_string(raw.sym) + " outside .dynsym");
                    }
                    r.symbol = dynsym_[raw.sym].name;
                }
                if (r.kind == RelocationKind::jump_slot && !r.symbol.empty()) {
                    if (plt_sec != nullptr) {
                        m.plt.push_back({plt_sec->virtual_offset + plt_entry_size * slot, r.symbol});
                    } else if (plt != nullptr) {
                        m.plt.push_back({plt->virtual_offset + plt_entry_size * (slot + 1), r.symbol});
                    }
                    ++slot;
                    if (!m.imports_symbol(r.symbol)) {
                        m.imports.push_back(r.symbol);
                    }
                }
                m.relocations.push_back(std::move(r));
            }
        }
    }

    void read_boundaries(ModuleImage& m) {
        for (std::size_t i = 1; i < headers_.size(); ++i) {
            if (names_[i] != instruction_boundary_section) {
                continue;
            }
            const auto data = contents(i);
            for (std::size_t at = 0; at + Layout::word_size <= data.size(); at += Layout::word_size) {
                m.declared_instructions.push_back(Layout::word(data, at));
            }
            std::sort(m.declared_instructions.begin(), m.declared_instructions.end());
            m.declared_instructions.erase(std::unique(m.declared_instructions.begin(), m.declared_instructions.end()),
                                          m.declared_instructions.end());
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::string path_;
    std::vector<typename Layout::SectionHeader> headers_;
    std::vector<std::string> names_;
    std::vector<RawSymbol> dynsym_;
    std::size_t dynsym_index_ = 0;
    std::size_t shstrndx_ = 0;
};

} // namespace elf::detail

/// Parses an ELF shared object into its semantic module model. The dynsym
/// view is always read; the symtab view is layered on top when present.
inline ModuleImage parse_module(std::span<const std::uint8_t> bytes, std::string path, ParseOptions options = {}) {
    if (bytes.size() < 16 || bytes[0] != 0x7f || bytes[1] != 'E' || bytes[2] != 'L' || bytes[3] != 'F') {
        throw Error(ErrorKind::malformed_header, path + ": missing ELF magic");
    }
    if (bytes[5] != elf::ELFDATA2LSB) {
        throw Error(ErrorKind::malformed_header, path + ": only little-endian objects are supported");
    }
    switch (bytes[4]) {
    case elf::ELFCLASS32:
        return elf::detail::Parser<elf::Elf32Layout>(bytes, std::move(path)).run();
    case elf::ELFCLASS64:
        if (!options.allow_elf64) {
            throw Error(ErrorKind::unsupported_class, path + ": ELF64 object and 64-bit support is disabled");
        }
        return elf::detail::Parser<elf::Elf64Layout>(bytes, std::move(path)).run();
    default:
        throw Error(ErrorKind::malformed_header, path + ": unknown EI_CLASS " + std::to_string(bytes[4]));
    }
}

} // namespace lockdown
