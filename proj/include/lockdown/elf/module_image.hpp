// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lockdown/error.hpp"

namespace lockdown {

using Address = std::uint64_t;

/// Half-open address interval [start, end).
struct Interval {
    Address start = 0;
    Address end = 0;

    [[nodiscard]] bool contains(Address a) const { return a >= start && a < end; }
    [[nodiscard]] std::uint64_t size() const { return end - start; }
    auto operator<=>(const Interval&) const = default;
};

enum class SymbolKind { function, object, other };
enum class SymbolBinding { global, local, weak };
enum class SymbolVisibility { exported, hidden };
enum class SymbolOrigin { dynsym, symtab };

inline constexpr std::string_view to_string(SymbolKind k) {
    switch (k) {
    case SymbolKind::function: return "function";
    case SymbolKind::object: return "object";
    case SymbolKind::other: return "other";
    }
    return "other";
}
inline constexpr std::string_view to_string(SymbolBinding b) {
    switch (b) {
    case SymbolBinding::global: return "global";
    case SymbolBinding::local: return "local";
    case SymbolBinding::weak: return "weak";
    }
    return "local";
}
inline constexpr std::string_view to_string(SymbolVisibility v) {
    return v == SymbolVisibility::exported ? "exported" : "hidden";
}
inline constexpr std::string_view to_string(SymbolOrigin o) { return o == SymbolOrigin::dynsym ? "dynsym" : "symtab"; }

/// One defined symbol. Values are module-relative (the link-time virtual
/// address of a shared object).
struct SymbolRecord {
    std::string name;
    Address value = 0;
    std::uint64_t size = 0;
    SymbolKind kind = SymbolKind::other;
    SymbolBinding binding = SymbolBinding::global;
    SymbolVisibility visibility = SymbolVisibility::hidden;
    SymbolOrigin origin = SymbolOrigin::dynsym;

    bool operator==(const SymbolRecord&) const = default;
};

struct Section {
    std::string name;
    std::uint64_t file_offset = 0;
    Address virtual_offset = 0;
    std::uint64_t size = 0;
    bool alloc = false;
    bool exec = false;
    bool write = false;
    std::vector<std::uint8_t> bytes; // empty for NOBITS and non-alloc sections

    [[nodiscard]] Interval range() const { return {virtual_offset, virtual_offset + size}; }
};

struct PltEntry {
    Address address = 0;
    std::string symbol;
    bool operator==(const PltEntry&) const = default;
};

enum class RelocationKind { relative, jump_slot, other };

struct Relocation {
    Address offset = 0;
    RelocationKind kind = RelocationKind::other;
    std::uint32_t raw_type = 0;
    std::int64_t addend = 0; // explicit (RELA) or read from the relocated word (REL)
    std::string symbol;
    bool operator==(const Relocation&) const = default;
};

/// Parsed, immutable view of one ELF dynamic shared object.
struct ModuleImage {
    std::string path;
    int elf_class = 32;
    std::vector<Section> sections;
    std::vector<SymbolRecord> symbols;
    std::vector<std::string> imports;
    std::vector<std::string> exports;
    std::vector<PltEntry> plt;
    std::vector<Relocation> relocations;
    std::vector<Address> declared_instructions;
    bool stripped = true;

    [[nodiscard]] std::vector<Interval> executable_ranges() const {
        std::vector<Interval> out;
        for (const auto& s : sections) {
            if (s.alloc && s.exec && s.size > 0) {
                out.push_back(s.range());
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    [[nodiscard]] bool in_executable_range(Address offset) const {
        return std::any_of(sections.begin(), sections.end(),
                           [&](const Section& s) { return s.alloc && s.exec && s.range().contains(offset); });
    }

    [[nodiscard]] std::uint64_t executable_bytes() const {
        std::uint64_t total = 0;
        for (const auto& r : executable_ranges()) {
            total += r.size();
        }
        return total;
    }

    /// Extent of all allocated sections, i.e. what a loader would map.
    [[nodiscard]] Interval mapped_span() const {
        Interval span{~Address{0}, 0};
        for (const auto& s : sections) {
            if (s.alloc && s.size > 0) {
                span.start = std::min(span.start, s.virtual_offset);
                span.end = std::max(span.end, s.virtual_offset + s.size);
            }
        }
        if (span.start > span.end) {
            return {0, 0};
        }
        return span;
    }

    [[nodiscard]] const Section* find_section(std::string_view name) const {
        auto it = std::find_if(sections.begin(), sections.end(), [&](const Section& s) { return s.name == name; });
        return it == sections.end() ? nullptr : &*it;
    }

    [[nodiscard]] bool exports_symbol(std::string_view name) const {
        return std::find(exports.begin(), exports.end(), name) != exports.end();
    }

    [[nodiscard]] bool imports_symbol(std::string_view name) const {
        return std::find(imports.begin(), imports.end(), name) != imports.end();
    }

    /// First dynsym definition of an exported name.
    [[nodiscard]] const SymbolRecord* exported_definition(std::string_view name) const {
        for (const auto& s : symbols) {
            if (s.origin == SymbolOrigin::dynsym && s.visibility == SymbolVisibility::exported && s.name == name) {
                return &s;
            }
        }
        return nullptr;
    }

    /// Reads a little-endian word of the module's pointer width from an
    /// allocated section with file contents.
    [[nodiscard]] std::optional<std::uint64_t> read_word(Address offset) const {
        const std::size_t width = elf_class == 64 ? 8 : 4;
        for (const auto& s : sections) {
            if (!s.bytes.empty() && offset >= s.virtual_offset && offset + width <= s.virtual_offset + s.bytes.size()) {
                std::uint64_t v = 0;
                const std::size_t at = offset - s.virtual_offset;
                for (std::size_t i = 0; i < width; ++i) {
                    v |= static_cast<std::uint64_t>(s.bytes[at + i]) << (8 * i);
                }
                return v;
            }
        }
        return std::nullopt;
    }
};

/// The stripped twin of a module: what `strip` leaves behind. Drops the
/// symtab-origin symbols and the non-alloc instruction boundary notes.
inline ModuleImage strip_module(ModuleImage m) {
    std::erase_if(m.symbols, [](const SymbolRecord& s) { return s.origin == SymbolOrigin::symtab; });
    std::erase_if(m.sections, [](const Section& s) { return s.name == ".symtab" || s.name == ".strtab" || s.name == ".insn_boundaries"; });
    m.declared_instructions.clear();
    m.stripped = true;
    return m;
}

} // namespace lockdown
