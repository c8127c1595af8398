// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON form of fixture specs, used by `lockdown fixture`:
//
//   {"modules": [{"path": "app", "text_address": "0x1000", "code": "5589e5c3",
//                 "symbols": [{"name": "main", "value": "0x1000", "size": 4,
//                              "binding": "global", "exported": true}],
//                 "imports": ["foo"], "plt": ["foo"]}]}
//
// A single module object without the "modules" wrapper is accepted too.

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lockdown/elf/fixture.hpp"
#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/error.hpp"

namespace lockdown {

struct NamedFixture {
    std::string path;
    FixtureSpec spec;
};

namespace detail {

inline std::vector<std::uint8_t> unhex_bytes(const std::string& s) {
    std::string digits;
    for (char c : s) {
        if (c != ' ') {
            digits += c;
        }
    }
    if (digits.size() % 2 != 0) {
        throw std::invalid_argument("odd number of hex digits");
    }
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < digits.size(); i += 2) {
        out.push_back(static_cast<std::uint8_t>(std::stoul(digits.substr(i, 2), nullptr, 16)));
    }
    return out;
}

inline std::string hex_bytes(const std::vector<std::uint8_t>& bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (auto b : bytes) {
        out += digits[b >> 4];
        out += digits[b & 15];
    }
    return out;
}

template <class E>
E enum_from(const nlohmann::json& j, const char* field, E fallback, std::initializer_list<E> values) {
    if (!j.contains(field)) {
        return fallback;
    }
    const auto name = j.at(field).get<std::string>();
    for (E v : values) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw std::invalid_argument(std::string("bad ") + field + " '" + name + "'");
}

inline NamedFixture fixture_from_json_unchecked(const nlohmann::json& j) {
    NamedFixture f;
    f.path = j.at("path").get<std::string>();
    FixtureSpec& s = f.spec;
    if (j.contains("text_address")) {
        s.text_address = parse_hex_address(j.at("text_address").get<std::string>());
    }
    s.code = unhex_bytes(j.at("code").get<std::string>());
    if (j.contains("data_address")) {
        s.data_address = parse_hex_address(j.at("data_address").get<std::string>());
    }
    if (j.contains("data")) {
        s.data = unhex_bytes(j.at("data").get<std::string>());
    }
    for (const auto& sym : j.value("symbols", nlohmann::json::array())) {
        FixtureSymbol fs;
        fs.name = sym.at("name").get<std::string>();
        fs.value = parse_hex_address(sym.at("value").get<std::string>());
        fs.size = sym.value("size", 0u);
        fs.kind = enum_from(sym, "kind", SymbolKind::function, {SymbolKind::function, SymbolKind::object});
        fs.binding = enum_from(sym, "binding", SymbolBinding::global,
                               {SymbolBinding::global, SymbolBinding::local, SymbolBinding::weak});
        fs.exported = sym.value("exported", false);
        s.symbols.push_back(std::move(fs));
    }
    s.imports = j.value("imports", std::vector<std::string>{});
    s.plt = j.value("plt", std::vector<std::string>{});
    for (const auto& r : j.value("relocations", nlohmann::json::array())) {
        s.relocations.push_back({parse_hex_address(r.at("offset").get<std::string>()),
                                 static_cast<std::uint32_t>(parse_hex_address(r.at("addend").get<std::string>()))});
    }
    for (const auto& a : j.value("instructions", nlohmann::json::array())) {
        s.instructions.push_back(parse_hex_address(a.get<std::string>()));
    }
    s.stripped = j.value("stripped", false);
    return f;
}

} // namespace detail

inline NamedFixture fixture_from_json(const nlohmann::json& j) {
    try {
        return detail::fixture_from_json_unchecked(j);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorKind::inconsistent_spec, std::string("fixture spec: ") + e.what());
    }
}

inline std::vector<NamedFixture> fixtures_from_json(const nlohmann::json& j) {
    std::vector<NamedFixture> out;
    if (j.is_object() && j.contains("modules")) {
        for (const auto& m : j.at("modules")) {
            out.push_back(fixture_from_json(m));
        }
    } else {
        out.push_back(fixture_from_json(j));
    }
    return out;
}

inline nlohmann::ordered_json fixture_to_json(const NamedFixture& f) {
    using nlohmann::ordered_json;
    const FixtureSpec& s = f.spec;
    ordered_json j;
    j["path"] = f.path;
    j["text_address"] = hex(s.text_address);
    j["code"] = detail::hex_bytes(s.code);
    if (s.data_address != 0) {
        j["data_address"] = hex(s.data_address);
    }
    if (!s.data.empty()) {
        j["data"] = detail::hex_bytes(s.data);
    }
    ordered_json symbols = ordered_json::array();
    for (const auto& sym : s.symbols) {
        symbols.push_back({{"name", sym.name},
                           {"value", hex(sym.value)},
                           {"size", sym.size},
                           {"kind", std::string(to_string(sym.kind))},
                           {"binding", std::string(to_string(sym.binding))},
                           {"exported", sym.exported}});
    }
    j["symbols"] = std::move(symbols);
    j["imports"] = s.imports;
    j["plt"] = s.plt;
    ordered_json relocs = ordered_json::array();
    for (const auto& r : s.relocations) {
        relocs.push_back({{"offset", hex(r.offset)}, {"addend", hex(r.addend)}});
    }
    j["relocations"] = std::move(relocs);
    ordered_json insns = ordered_json::array();
    for (Address a : s.instructions) {
        insns.push_back(hex(a));
    }
    j["instructions"] = std::move(insns);
    j["stripped"] = s.stripped;
    return j;
}

/// Instruction-boundary sidecar describing a fixture: every symbol start in
/// .text plus the declared instructions. It is the same for a module and its
/// stripped twin, so both are judged against one instruction map.
inline BoundarySidecar fixture_sidecar(const NamedFixture& f) {
    BoundarySidecar s{f.path, {}};
    const Address end = f.spec.text_address + f.spec.code.size();
    for (const auto& sym : f.spec.symbols) {
        if (sym.kind == SymbolKind::function && sym.value >= f.spec.text_address && sym.value < end) {
            s.offsets.push_back(sym.value);
        }
    }
    for (Address a : f.spec.instructions) {
        if (a >= f.spec.text_address && a < end) {
            s.offsets.push_back(a);
        }
    }
    std::sort(s.offsets.begin(), s.offsets.end());
    s.offsets.erase(std::unique(s.offsets.begin(), s.offsets.end()), s.offsets.end());
    return s;
}

} // namespace lockdown
