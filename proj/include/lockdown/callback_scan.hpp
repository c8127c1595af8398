// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Callback pointer heuristics. Code pointers that are handed around without
// an import/export relation (qsort comparators, signal handlers, ...) are
// recognised from the instruction patterns that materialise them and from
// relocated data words. A candidate is only admitted when it lands on a
// valid instruction start of a loaded module.

#include <cstdint>
#include <set>
#include <string_view>
#include <tuple>
#include <vector>

#include "lockdown/elf/elf_format.hpp"
#include "lockdown/loaded_module.hpp"

namespace lockdown {

enum class CallbackPattern { push_imm32, mov_imm32_to_stack_slot, lea_ebx_relative, relative_relocation, data_scan };

inline constexpr std::string_view to_string(CallbackPattern p) {
    switch (p) {
    case CallbackPattern::push_imm32: return "push-imm32";
    case CallbackPattern::mov_imm32_to_stack_slot: return "mov-imm32-to-stack-slot";
    case CallbackPattern::lea_ebx_relative: return "lea-ebx-relative";
    case CallbackPattern::relative_relocation: return "relative-relocation";
    case CallbackPattern::data_scan: return "data-scan";
    }
    return "unknown";
}

struct CallbackFinding {
    Address address = 0;     // admitted target
    CallbackPattern pattern = CallbackPattern::push_imm32;
    ModuleId source;         // module whose bytes carried the pointer
    Address site = 0;        // absolute location of the instruction or data word

    auto operator<=>(const CallbackFinding&) const = default;
};

namespace detail {

inline std::uint32_t imm32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return elf::read_le32(b, at);
}

} // namespace detail

/// Scans one module's code and data for code pointers. `admit(address)`
/// decides whether a candidate is kept (valid instruction start of some
/// module the caller cares about).
template <class Admit>
std::vector<CallbackFinding> scan_module_callbacks(const LoadedModule& source, Admit&& admit) {
    std::vector<CallbackFinding> out;
    auto consider = [&](Address value, CallbackPattern pattern, Address site) {
        if (admit(value)) {
            out.push_back({value, pattern, source.id, site});
        }
    };
    const ModuleImage& image = *source.image;
    const auto got = source.got_plt();

    for (const auto& section : image.sections) {
        if (!section.alloc || !section.exec || section.bytes.empty() || section.name.starts_with(".plt")) {
            continue;
        }
        const auto& b = section.bytes;
        const std::size_t n = b.size();
        const Address at_base = source.base + section.virtual_offset;
        for (std::size_t i = 0; i < n; ++i) {
            const Address site = at_base + i;
            switch (b[i]) {
            case 0x68: // push imm32
                if (i + 5 <= n) {
                    consider(detail::imm32(b, i + 1), CallbackPattern::push_imm32, site);
                }
                break;
            case 0xc7: // mov r/m32, imm32 with [esp+disp8] or [esp+disp32]
                if (i + 3 <= n && b[i + 2] == 0x24) {
                    if (b[i + 1] == 0x44 && i + 8 <= n) {
                        consider(detail::imm32(b, i + 4), CallbackPattern::mov_imm32_to_stack_slot, site);
                    } else if (b[i + 1] == 0x84 && i + 11 <= n) {
                        consider(detail::imm32(b, i + 7), CallbackPattern::mov_imm32_to_stack_slot, site);
                    }
                }
                break;
            case 0x8d: // lea r32, [ebx+disp32]
                if (got && i + 6 <= n && (b[i + 1] & 0xc7) == 0x83) {
                    const auto disp = static_cast<std::int32_t>(detail::imm32(b, i + 2));
                    consider(static_cast<Address>(static_cast<std::int64_t>(*got) + disp), CallbackPattern::lea_ebx_relative, site);
                }
                break;
            default:
                break;
            }
        }
    }

    std::set<Address> relocated_words;
    for (const auto& r : image.relocations) {
        if (r.kind != RelocationKind::relative) {
            continue;
        }
        relocated_words.insert(r.offset);
        const Address addend = image.elf_class == 32 ? static_cast<std::uint32_t>(r.addend) : static_cast<Address>(r.addend);
        consider(source.base + addend, CallbackPattern::relative_relocation, source.base + r.offset);
    }

    const std::size_t width = image.elf_class == 64 ? 8 : 4;
    for (const auto& section : image.sections) {
        if (section.name != ".data" || section.bytes.empty()) {
            continue;
        }
        for (std::size_t at = 0; at + width <= section.bytes.size(); at += width) {
            const Address rel = section.virtual_offset + at;
            if (relocated_words.count(rel) != 0) {
                continue;
            }
            const Address value = width == 8 ? elf::read_le64(section.bytes, at) : elf::read_le32(section.bytes, at);
            consider(value, CallbackPattern::data_scan, source.base + rel);
        }
    }
    return out;
}

} // namespace lockdown
