// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small hand-written modules shared by the unit suites.

#include <memory>
#include <string>
#include <vector>

#include "lockdown/lockdown.hpp"

namespace lockdown::testing {

inline constexpr Address app_base = 0x8048000;
inline constexpr Address lib_base = 0xb7000000;
inline constexpr Address other_base = 0xb7100000;

inline FixtureSymbol fn(std::string name, Address value, std::uint32_t size, bool exported) {
    return {std::move(name), value, size, SymbolKind::function, exported ? SymbolBinding::global : SymbolBinding::local, exported};
}

/// libfoo.so: exports foo [0x100,0x120) and bar [0x120,0x140), keeps a
/// local helper [0x140,0x160). Declared instructions at 0x104 and 0x110.
inline NamedFixture libfoo(bool stripped = false) {
    NamedFixture f;
    f.path = "libfoo.so";
    f.spec.text_address = 0x100;
    f.spec.code.assign(0x80, 0x90);
    f.spec.symbols = {fn("foo", 0x100, 0x20, true), fn("bar", 0x120, 0x20, true), fn("helper", 0x140, 0x20, false)};
    f.spec.instructions = {0x104, 0x110};
    f.spec.stripped = stripped;
    return f;
}

/// app: main [0x100,0x120) and a local [0x120,0x140); imports foo through
/// one PLT slot.
inline NamedFixture app() {
    NamedFixture f;
    f.path = "app";
    f.spec.text_address = 0x100;
    f.spec.code.assign(0x40, 0x90);
    f.spec.symbols = {{"main", 0x100, 0x20, SymbolKind::function, SymbolBinding::global, false}, fn("local", 0x120, 0x20, false)};
    f.spec.imports = {"foo"};
    f.spec.plt = {"foo"};
    f.spec.instructions = {0x108};
    return f;
}

/// A second exporter of foo plus baz, importing nothing.
inline NamedFixture libother() {
    NamedFixture f;
    f.path = "libother.so";
    f.spec.text_address = 0x100;
    f.spec.code.assign(0x40, 0x90);
    f.spec.symbols = {fn("foo", 0x100, 0x20, true), fn("baz", 0x120, 0x20, true)};
    return f;
}

inline std::shared_ptr<const ModuleImage> image_of(const NamedFixture& f) {
    return std::make_shared<const ModuleImage>(parse_module(build_fixture(f.spec), f.path));
}

inline std::shared_ptr<const InstructionMap> imap_of(const NamedFixture& f, const ModuleImage& image, bool sidecar = true) {
    const BoundarySidecar s = fixture_sidecar(f);
    return std::make_shared<const InstructionMap>(derive_instruction_map(image, sidecar ? &s : nullptr));
}

inline ModuleId load(ProcessImage& p, const NamedFixture& f, Address base, bool sidecar = true) {
    auto image = image_of(f);
    auto imap = imap_of(f, *image, sidecar);
    return p.load_module(image, base, imap);
}

/// Provider over a fixed set of fixtures, with sidecars.
inline ModuleProvider fixture_provider(std::vector<NamedFixture> fixtures) {
    auto all = std::make_shared<std::vector<NamedFixture>>(std::move(fixtures));
    return [all](const std::string& path) -> ModuleArtifacts {
        for (const auto& f : *all) {
            if (f.path == path) {
                auto image = image_of(f);
                return {image, imap_of(f, *image)};
            }
        }
        throw Error(ErrorKind::io_error, "no fixture " + path);
    };
}

inline TraceEvent ev(std::uint64_t seq, EventKind kind, Address src = 0, Address dst = 0, std::uint32_t length = 0) {
    TraceEvent e;
    e.seq = seq;
    e.kind = kind;
    e.src = src;
    e.dst = dst;
    e.length = length;
    return e;
}

inline TraceEvent load_ev(std::uint64_t seq, std::string path, Address base) {
    TraceEvent e = ev(seq, EventKind::load);
    e.path = std::move(path);
    e.base = base;
    return e;
}

} // namespace lockdown::testing
