// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/elf/module_image.hpp"

namespace lockdown {

struct ModuleId {
    std::uint32_t value = 0;
    auto operator<=>(const ModuleId&) const = default;
};

inline constexpr Address page_size = 4096;

/// A module mapped at a base address, with its instruction map and the
/// function-extent index used for jump checks.
struct LoadedModule {
    ModuleId id;
    std::shared_ptr<const ModuleImage> image;
    Address base = 0;
    std::shared_ptr<const InstructionMap> imap;
    Interval span;                            // absolute mapped range
    std::vector<Interval> executable;         // absolute, sorted
    std::vector<Interval> known_functions;    // module-relative, sorted; symtab+dynsym or dynsym only when stripped

    [[nodiscard]] const std::string& path() const { return image->path; }
    [[nodiscard]] bool contains(Address abs) const { return span.contains(abs); }

    [[nodiscard]] bool in_executable(Address abs) const {
        return std::any_of(executable.begin(), executable.end(), [&](const Interval& r) { return r.contains(abs); });
    }

    [[nodiscard]] bool is_valid_instruction(Address abs) const {
        return abs >= base && in_executable(abs) && imap->contains(abs - base);
    }

    /// Absolute starts of every valid instruction in this module.
    [[nodiscard]] std::vector<Address> valid_instructions() const {
        std::vector<Address> out;
        out.reserve(imap->offsets.size());
        for (Address o : imap->offsets) {
            out.push_back(base + o);
        }
        return out;
    }

    /// Enclosing function of an address. Known function symbols give exact
    /// intervals; anywhere else the granule between neighbouring known
    /// symbols and the section bounds is returned.
    [[nodiscard]] std::optional<Interval> function_extent(Address abs) const {
        if (abs < base) {
            return std::nullopt;
        }
        const Address rel = abs - base;
        const Section* section = nullptr;
        for (const auto& s : image->sections) {
            if (s.alloc && s.exec && s.range().contains(rel)) {
                section = &s;
                break;
            }
        }
        if (section == nullptr) {
            return std::nullopt;
        }
        const Interval bounds = section->range();
        std::optional<Interval> best;
        for (const auto& f : known_functions) {
            if (f.contains(rel) && (!best || f.start > best->start || (f.start == best->start && f.end < best->end))) {
                best = f;
            }
        }
        if (best) {
            return Interval{base + best->start, base + best->end};
        }
        Address lo = bounds.start;
        Address hi = bounds.end;
        for (const auto& f : known_functions) {
            if (f.end <= rel && f.end > lo && f.end <= bounds.end) {
                lo = f.end;
            }
            if (f.start <= rel && f.start > lo && f.start >= bounds.start) {
                lo = f.start;
            }
            if (f.start > rel && f.start < hi && f.start >= bounds.start) {
                hi = f.start;
            }
        }
        return Interval{base + lo, base + hi};
    }

    [[nodiscard]] std::optional<Address> got_plt() const {
        if (const Section* s = image->find_section(".got.plt")) {
            return base + s->virtual_offset;
        }
        return std::nullopt;
    }
};

inline LoadedModule make_loaded_module(ModuleId id, std::shared_ptr<const ModuleImage> image, Address base,
                                       std::shared_ptr<const InstructionMap> imap) {
    LoadedModule lm;
    lm.id = id;
    lm.base = base;
    const Interval span = image->mapped_span();
    lm.span = {base + span.start, base + span.end};
    for (const auto& r : image->executable_ranges()) {
        lm.executable.push_back({base + r.start, base + r.end});
    }
    for (const auto& s : image->symbols) {
        if (s.kind != SymbolKind::function || !image->in_executable_range(s.value)) {
            continue;
        }
        if (image->stripped && s.visibility != SymbolVisibility::exported) {
            continue;
        }
        // zero-sized symbols still delimit granules
        lm.known_functions.push_back({s.value, s.value + s.size});
    }
    std::sort(lm.known_functions.begin(), lm.known_functions.end());
    lm.known_functions.erase(std::unique(lm.known_functions.begin(), lm.known_functions.end()), lm.known_functions.end());
    lm.image = std::move(image);
    lm.imap = std::move(imap);
    return lm;
}

} // namespace lockdown
