// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/elf/parse.hpp"
#include "lockdown/error.hpp"
#include "lockdown/replay.hpp"

namespace lockdown {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io_error, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text) || !out.flush()) {
        throw Error(ErrorKind::io_error, "cannot write " + path.string());
    }
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) {
        throw Error(ErrorKind::io_error, "cannot write " + path.string());
    }
}

/// Resolves trace module paths against `root` and parses each image once.
/// Sidecar entries are matched by the path as written in the trace.
inline ModuleProvider directory_provider(std::filesystem::path root, std::map<std::string, BoundarySidecar> sidecars = {},
                                         ParseOptions options = {}) {
    auto cache = std::make_shared<std::map<std::string, ModuleArtifacts>>();
    return [root = std::move(root), sidecars = std::move(sidecars), options, cache](const std::string& path) {
        if (auto it = cache->find(path); it != cache->end()) {
            return it->second;
        }
        std::filesystem::path file(path);
        if (file.is_relative()) {
            file = root / file;
        }
        auto image = std::make_shared<const ModuleImage>(parse_module(read_file(file), path, options));
        auto sc = sidecars.find(path);
        auto imap = std::make_shared<const InstructionMap>(
            derive_instruction_map(*image, sc == sidecars.end() ? nullptr : &sc->second));
        ModuleArtifacts a{std::move(image), std::move(imap)};
        cache->emplace(path, a);
        return a;
    };
}

} // namespace lockdown
