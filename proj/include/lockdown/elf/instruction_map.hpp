// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <stdexcept>
#include <string_view>
#include <sstream>
#include <string>
#include <vector>

#include "lockdown/elf/module_image.hpp"
#include "lockdown/error.hpp"

namespace lockdown {

/// Module-relative instruction starts that transfers may legally target.
struct InstructionMap {
    std::string module_path;
    std::vector<Address> offsets; // sorted, unique

    [[nodiscard]] bool contains(Address offset) const {
        return std::binary_search(offsets.begin(), offsets.end(), offset);
    }

    [[nodiscard]] std::size_t count_in(Interval range) const {
        auto lo = std::lower_bound(offsets.begin(), offsets.end(), range.start);
        auto hi = std::lower_bound(offsets.begin(), offsets.end(), range.end);
        return static_cast<std::size_t>(hi - lo);
    }

    [[nodiscard]] std::size_t size() const { return offsets.size(); }

    bool operator==(const InstructionMap&) const = default;
};

/// Instruction boundaries for one module, as produced by an external
/// disassembly pass.
struct BoundarySidecar {
    std::string module_path;
    std::vector<Address> offsets;
};

inline Address parse_hex_address(std::string_view text) {
    if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
        text.remove_prefix(2);
    } else {
        throw std::invalid_argument("missing 0x prefix");
    }
    Address value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument("not a hexadecimal address");
    }
    return value;
}

/// Reads the line-oriented sidecar format `<module-path> <hex-offset>`.
/// Blank lines and lines starting with '#' are ignored.
inline std::map<std::string, BoundarySidecar> parse_sidecar(std::istream& in) {
    std::map<std::string, BoundarySidecar> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream fields(line);
        std::string path, offset, extra;
        if (!(fields >> path >> offset) || (fields >> extra)) {
            throw Error(ErrorKind::malformed_sidecar, "line " + std::to_string(line_no) + ": expected '<module-path> <hex-offset>'");
        }
        Address value = 0;
        try {
            value = parse_hex_address(offset);
        } catch (const std::exception& e) {
            throw Error(ErrorKind::malformed_sidecar, "line " + std::to_string(line_no) + ": " + e.what());
        }
        auto& entry = out[path];
        entry.module_path = path;
        if (!entry.offsets.empty() && value <= entry.offsets.back()) {
            throw Error(ErrorKind::malformed_sidecar, "line " + std::to_string(line_no) + ": offsets for " + path +
                                                          " are not strictly ascending");
        }
        entry.offsets.push_back(value);
    }
    return out;
}

inline std::string format_sidecar(const BoundarySidecar& sidecar) {
    std::string out;
    for (Address a : sidecar.offsets) {
        out += sidecar.module_path + " " + hex(a) + "\n";
    }
    return out;
}

/// Valid instruction starts of a module. A sidecar is adopted verbatim.
/// Without one, the fallback is every function symbol start plus the
/// boundaries the image itself declares; a stripped image only offers its
/// exported function starts.
inline InstructionMap derive_instruction_map(const ModuleImage& module, const BoundarySidecar* sidecar = nullptr) {
    InstructionMap map;
    map.module_path = module.path;
    if (sidecar != nullptr) {
        if (sidecar->module_path != module.path) {
            throw Error(ErrorKind::sidecar_module_mismatch,
                        "sidecar for '" + sidecar->module_path + "' applied to '" + module.path + "'");
        }
        for (Address a : sidecar->offsets) {
            if (!module.in_executable_range(a)) {
                throw Error(ErrorKind::sidecar_module_mismatch,
                            "sidecar offset " + hex(a) + " is outside the executable sections of '" + module.path + "'");
            }
        }
        map.offsets = sidecar->offsets;
    } else {
        for (const auto& s : module.symbols) {
            if (s.kind != SymbolKind::function || !module.in_executable_range(s.value)) {
                continue;
            }
            if (module.stripped && s.visibility != SymbolVisibility::exported) {
                continue;
            }
            map.offsets.push_back(s.value);
        }
        if (!module.stripped) {
            for (Address a : module.declared_instructions) {
                if (module.in_executable_range(a)) {
                    map.offsets.push_back(a);
                }
            }
        }
    }
    std::sort(map.offsets.begin(), map.offsets.end());
    map.offsets.erase(std::unique(map.offsets.begin(), map.offsets.end()), map.offsets.end());
    return map;
}

} // namespace lockdown
