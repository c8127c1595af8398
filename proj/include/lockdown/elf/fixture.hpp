// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic ELF32 shared objects for tests and demos. The builder emits the
// smallest image parse_module understands: ELF header, section header table,
// .text/.plt/.got.plt/.data, the dynamic symbol table, optional .symtab and
// REL relocations. No program headers are written.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lockdown/elf/elf_format.hpp"
#include "lockdown/elf/module_image.hpp"
#include "lockdown/error.hpp"

namespace lockdown {

struct FixtureSymbol {
    std::string name;
    Address value = 0;
    std::uint32_t size = 0;
    SymbolKind kind = SymbolKind::function;
    SymbolBinding binding = SymbolBinding::global;
    bool exported = false;

    bool operator==(const FixtureSymbol&) const = default;
};

struct FixtureRelocation {
    Address offset = 0;  // must lie in .data
    std::uint32_t addend = 0;

    bool operator==(const FixtureRelocation&) const = default;
};

struct FixtureSpec {
    Address text_address = 0x1000;
    std::vector<std::uint8_t> code;
    Address data_address = 0; // 0: placed after .got.plt
    std::vector<std::uint8_t> data;
    std::vector<FixtureSymbol> symbols;
    std::vector<std::string> imports;
    std::vector<std::string> plt;  // one PLT slot per name, in order
    std::vector<FixtureRelocation> relocations;  // R_386_RELATIVE
    std::vector<Address> instructions;  // declared instruction starts
    bool stripped = false;

    bool operator==(const FixtureSpec&) const = default;
};

/// Where the builder places each synthetic section.
struct FixtureLayout {
    Interval text;
    Interval plt;
    Interval got_plt;
    Interval data;
};

inline Address align_up(Address v, Address a) { return (v + a - 1) / a * a; }

inline FixtureLayout layout_fixture(const FixtureSpec& spec) {
    FixtureLayout l;
    l.text = {spec.text_address, spec.text_address + spec.code.size()};
    Address cursor = l.text.end;
    if (!spec.plt.empty()) {
        const Address start = align_up(cursor, 16);
        l.plt = {start, start + elf::plt_entry_size * (spec.plt.size() + 1)};
        cursor = l.plt.end;
    }
    const Address got = align_up(cursor, 4);
    l.got_plt = {got, got + 4 * (3 + spec.plt.size())};
    cursor = l.got_plt.end;
    if (!spec.data.empty()) {
        const Address start = spec.data_address != 0 ? spec.data_address : align_up(cursor, 16);
        l.data = {start, start + spec.data.size()};
    } else {
        l.data = {cursor, cursor};
    }
    return l;
}

namespace elf::detail {

inline void check_fixture(const FixtureSpec& spec, const FixtureLayout& l) {
    auto fail = [](const std::string& why) { throw Error(ErrorKind::inconsistent_spec, why); };
    if (spec.code.empty()) {
        fail("empty .text");
    }
    if (spec.text_address + spec.code.size() > 0xffffffffull) {
        fail(".text does not fit a 32-bit address space");
    }
    if (!spec.data.empty()) {
        for (const auto& other : {l.text, l.plt, l.got_plt}) {
            if (other.size() > 0 && l.data.start < other.end && other.start < l.data.end) {
                fail(".data at " + hex(l.data.start) + " overlaps another section");
            }
        }
    }
    std::set<std::string> names;
    for (const auto& s : spec.symbols) {
        if (s.name.empty()) {
            fail("symbol without a name");
        }
        if (!names.insert(s.name).second) {
            fail("duplicate symbol " + s.name);
        }
        const bool in_text = l.text.contains(s.value) && s.value + s.size <= l.text.end;
        const bool in_data = l.data.contains(s.value) && s.value + s.size <= l.data.end;
        if (!in_text && !in_data) {
            fail("symbol " + s.name + " at " + hex(s.value) + " lies outside .text/.data");
        }
        if (s.exported && s.binding == SymbolBinding::local) {
            fail("local symbol " + s.name + " cannot be exported");
        }
    }
    std::set<std::string> imported;
    for (const auto& name : spec.imports) {
        if (name.empty() || names.count(name) != 0 || !imported.insert(name).second) {
            fail("import '" + name + "' is empty, duplicated or also defined");
        }
    }
    for (const auto& name : spec.plt) {
        if (imported.count(name) == 0) {
            fail("PLT slot for '" + name + "' which is not imported");
        }
    }
    std::set<Address> words;
    for (const auto& r : spec.relocations) {
        if (r.offset < l.data.start || r.offset + 4 > l.data.end) {
            fail("relocation at " + hex(r.offset) + " outside .data");
        }
        for (Address w : words) {
            if (r.offset < w + 4 && w < r.offset + 4) {
                fail("overlapping relocations at " + hex(r.offset));
            }
        }
        words.insert(r.offset);
    }
    for (Address a : spec.instructions) {
        if (!l.text.contains(a)) {
            fail("declared instruction " + hex(a) + " outside .text");
        }
    }
}

class StringTable {
  public:
    StringTable() { bytes_.push_back(0); }
    std::uint32_t add(const std::string& s) {
        if (s.empty()) {
            return 0;
        }
        if (auto it = index_.find(s); it != index_.end()) {
            return it->second;
        }
        const auto at = static_cast<std::uint32_t>(bytes_.size());
        bytes_.insert(bytes_.end(), s.begin(), s.end());
        bytes_.push_back(0);
        index_.emplace(s, at);
        return at;
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  private:
    std::vector<std::uint8_t> bytes_;
    std::map<std::string, std::uint32_t> index_;
};

struct OutSection {
    std::string name;
    std::uint32_t type = SHT_PROGBITS;
    std::uint32_t flags = 0;
    std::uint32_t addr = 0;
    std::vector<std::uint8_t> bytes;
    std::uint32_t link = 0;
    std::uint32_t info = 0;
    std::uint32_t entsize = 0;
};

inline void put_symbol(std::vector<std::uint8_t>& out, std::uint32_t name, std::uint32_t value, std::uint32_t size,
                       std::uint8_t bind, std::uint8_t type, std::uint8_t other, std::uint16_t shndx) {
    put_le32(out, name);
    put_le32(out, value);
    put_le32(out, size);
    out.push_back(static_cast<std::uint8_t>((bind << 4) | type));
    out.push_back(other);
    put_le16(out, shndx);
}

inline std::uint8_t symbol_type(SymbolKind k) {
    return k == SymbolKind::function ? STT_FUNC : k == SymbolKind::object ? STT_OBJECT : STT_NOTYPE;
}

inline std::uint8_t symbol_bind(SymbolBinding b) {
    return b == SymbolBinding::local ? STB_LOCAL : b == SymbolBinding::weak ? STB_WEAK : STB_GLOBAL;
}

} // namespace elf::detail

/// Serializes a fixture description into ELF32 little-endian bytes.
inline std::vector<std::uint8_t> build_fixture(const FixtureSpec& spec) {
    using namespace elf;
    using namespace elf::detail;
    const FixtureLayout l = layout_fixture(spec);
    check_fixture(spec, l);

    std::vector<OutSection> out(1); // index 0 is SHT_NULL
    auto add = [&](OutSection s) {
        out.push_back(std::move(s));
        return static_cast<std::uint16_t>(out.size() - 1);
    };

    const auto text_index = add({".text", SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR, static_cast<std::uint32_t>(l.text.start), spec.code});

    // i386 lazy-binding PLT: PLT0 pushes GOT[1] and jumps through GOT[2];
    // PLTn jumps through its GOT slot, pushes its relocation offset and
    // falls back to PLT0.
    std::uint16_t plt_index = 0;
    if (!spec.plt.empty()) {
        std::vector<std::uint8_t> plt;
        const auto got = static_cast<std::uint32_t>(l.got_plt.start);
        plt.insert(plt.end(), {0xff, 0x35});
        put_le32(plt, got + 4);
        plt.insert(plt.end(), {0xff, 0x25});
        put_le32(plt, got + 8);
        put_le32(plt, 0);
        for (std::size_t i = 0; i < spec.plt.size(); ++i) {
            const auto entry = static_cast<std::uint32_t>(l.plt.start + plt_entry_size * (i + 1));
            plt.insert(plt.end(), {0xff, 0x25});
            put_le32(plt, got + static_cast<std::uint32_t>(4 * (3 + i)));
            plt.push_back(0x68);
            put_le32(plt, static_cast<std::uint32_t>(8 * i));
            plt.push_back(0xe9);
            put_le32(plt, static_cast<std::uint32_t>(l.plt.start) - (entry + 16));
        }
        plt_index = add({".plt", SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR, static_cast<std::uint32_t>(l.plt.start), std::move(plt)});
    }

    std::vector<std::uint8_t> got_plt;
    for (std::size_t i = 0; i < 3; ++i) {
        put_le32(got_plt, 0);
    }
    for (std::size_t i = 0; i < spec.plt.size(); ++i) {
        put_le32(got_plt, static_cast<std::uint32_t>(l.plt.start + plt_entry_size * (i + 1) + 6));
    }
    const auto got_index = add({".got.plt", SHT_PROGBITS, SHF_ALLOC | SHF_WRITE, static_cast<std::uint32_t>(l.got_plt.start), std::move(got_plt)});

    std::uint16_t data_index = 0;
    if (!spec.data.empty()) {
        std::vector<std::uint8_t> data = spec.data;
        for (const auto& r : spec.relocations) {
            write_le32(data, r.offset - l.data.start, r.addend);
        }
        data_index = add({".data", SHT_PROGBITS, SHF_ALLOC | SHF_WRITE, static_cast<std::uint32_t>(l.data.start), std::move(data)});
    }

    auto shndx_for = [&](const FixtureSymbol& s) { return l.text.contains(s.value) ? text_index : data_index; };

    // .dynsym: imports first (undefined), then exported definitions.
    StringTable dynstr;
    std::vector<std::uint8_t> dynsym;
    put_symbol(dynsym, 0, 0, 0, 0, 0, 0, 0);
    std::map<std::string, std::uint32_t> dynsym_index;
    for (const auto& name : spec.imports) {
        dynsym_index[name] = static_cast<std::uint32_t>(dynsym.size() / 16);
        put_symbol(dynsym, dynstr.add(name), 0, 0, STB_GLOBAL, STT_FUNC, STV_DEFAULT, SHN_UNDEF);
    }
    for (const auto& s : spec.symbols) {
        if (s.exported) {
            put_symbol(dynsym, dynstr.add(s.name), static_cast<std::uint32_t>(s.value), s.size, symbol_bind(s.binding),
                       symbol_type(s.kind), STV_DEFAULT, shndx_for(s));
        }
    }
    const auto dynsym_at = static_cast<std::uint16_t>(out.size());
    add({".dynsym", SHT_DYNSYM, 0, 0, std::move(dynsym), static_cast<std::uint32_t>(dynsym_at + 1), 1, 16});
    add({".dynstr", SHT_STRTAB, 0, 0, dynstr.bytes()});

    if (!spec.relocations.empty()) {
        std::vector<std::uint8_t> rel;
        for (const auto& r : spec.relocations) {
            put_le32(rel, static_cast<std::uint32_t>(r.offset));
            put_le32(rel, R_RELATIVE);
        }
        add({".rel.dyn", SHT_REL, 0, 0, std::move(rel), dynsym_at, 0, 8});
    }
    if (!spec.plt.empty()) {
        std::vector<std::uint8_t> rel;
        for (std::size_t i = 0; i < spec.plt.size(); ++i) {
            put_le32(rel, static_cast<std::uint32_t>(l.got_plt.start + 4 * (3 + i)));
            put_le32(rel, (dynsym_index.at(spec.plt[i]) << 8) | R_JMP_SLOT);
        }
        add({".rel.plt", SHT_REL, 0, 0, std::move(rel), dynsym_at, got_index, 8});
    }
    (void)plt_index;

    if (!spec.stripped) {
        StringTable strtab;
        std::vector<std::uint8_t> symtab;
        put_symbol(symtab, 0, 0, 0, 0, 0, 0, 0);
        std::vector<const FixtureSymbol*> ordered;
        for (const auto& s : spec.symbols) {
            ordered.push_back(&s);
        }
        std::stable_partition(ordered.begin(), ordered.end(),
                              [](const FixtureSymbol* s) { return s->binding == SymbolBinding::local; });
        std::uint32_t first_global = 1;
        for (const auto* s : ordered) {
            if (s->binding == SymbolBinding::local) {
                ++first_global;
            }
            const std::uint8_t other = s->exported || s->binding == SymbolBinding::local ? STV_DEFAULT : 2 /* STV_HIDDEN */;
            put_symbol(symtab, strtab.add(s->name), static_cast<std::uint32_t>(s->value), s->size, symbol_bind(s->binding),
                       symbol_type(s->kind), other, shndx_for(*s));
        }
        const auto symtab_at = static_cast<std::uint32_t>(out.size());
        add({".symtab", SHT_SYMTAB, 0, 0, std::move(symtab), symtab_at + 1, first_global, 16});
        add({".strtab", SHT_STRTAB, 0, 0, strtab.bytes()});

        if (!spec.instructions.empty()) {
            std::vector<Address> sorted = spec.instructions;
            std::sort(sorted.begin(), sorted.end());
            sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
            std::vector<std::uint8_t> notes;
            for (Address a : sorted) {
                put_le32(notes, static_cast<std::uint32_t>(a));
            }
            add({instruction_boundary_section, SHT_PROGBITS, 0, 0, std::move(notes), 0, 0, 4});
        }
    }

    StringTable shstr;
    for (auto& s : out) {
        shstr.add(s.name);
    }
    shstr.add(".shstrtab");
    const auto shstrndx = static_cast<std::uint16_t>(out.size());
    add({".shstrtab", SHT_STRTAB, 0, 0, shstr.bytes()});

    std::vector<std::uint8_t> image(Elf32Layout::ehdr_size, 0);
    std::vector<std::uint32_t> offsets(out.size(), 0);
    for (std::size_t i = 1; i < out.size(); ++i) {
        image.resize(align_up(image.size(), 4), 0);
        offsets[i] = static_cast<std::uint32_t>(image.size());
        image.insert(image.end(), out[i].bytes.begin(), out[i].bytes.end());
    }
    image.resize(align_up(image.size(), 4), 0);
    const auto shoff = static_cast<std::uint32_t>(image.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& s = out[i];
        put_le32(image, i == 0 ? 0 : shstr.add(s.name));
        put_le32(image, i == 0 ? SHT_NULL : s.type);
        put_le32(image, s.flags);
        put_le32(image, s.addr);
        put_le32(image, offsets[i]);
        put_le32(image, static_cast<std::uint32_t>(s.bytes.size()));
        put_le32(image, s.link);
        put_le32(image, s.info);
        put_le32(image, i == 0 ? 0 : 4);
        put_le32(image, s.entsize);
    }

    std::vector<std::uint8_t> ehdr;
    ehdr.insert(ehdr.end(), {0x7f, 'E', 'L', 'F', ELFCLASS32, ELFDATA2LSB, 1, 0});
    ehdr.resize(16, 0);
    put_le16(ehdr, ET_DYN);
    put_le16(ehdr, EM_386);
    put_le32(ehdr, 1);
    put_le32(ehdr, 0); // e_entry
    put_le32(ehdr, 0); // e_phoff
    put_le32(ehdr, shoff);
    put_le32(ehdr, 0); // e_flags
    put_le16(ehdr, static_cast<std::uint16_t>(Elf32Layout::ehdr_size));
    put_le16(ehdr, 0);
    put_le16(ehdr, 0);
    put_le16(ehdr, static_cast<std::uint16_t>(Elf32Layout::shdr_size));
    put_le16(ehdr, static_cast<std::uint16_t>(out.size()));
    put_le16(ehdr, shstrndx);
    std::copy(ehdr.begin(), ehdr.end(), image.begin());
    return image;
}

} // namespace lockdown
