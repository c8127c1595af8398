// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lockdown {

enum class ErrorKind {
    malformed_header,
    truncated_section,
    unsupported_class,
    inconsistent_spec,
    sidecar_module_mismatch,
    malformed_sidecar,
    malformed_allowlist,
    overlapping_base,
    misaligned_base,
    duplicate_module,
    unknown_module,
    unresolved_symbol,
    depth_exceeded,
    invalid_universe,
    empty_process,
    no_transfers,
    malformed_trace,
    address_outside_modules,
    mutation_out_of_range,
    io_error,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::malformed_header: return "malformed-header";
    case ErrorKind::truncated_section: return "truncated-section";
    case ErrorKind::unsupported_class: return "unsupported-class";
    case ErrorKind::inconsistent_spec: return "inconsistent-spec";
    case ErrorKind::sidecar_module_mismatch: return "sidecar-module-mismatch";
    case ErrorKind::malformed_sidecar: return "malformed-sidecar";
    case ErrorKind::malformed_allowlist: return "malformed-allowlist";
    case ErrorKind::overlapping_base: return "overlapping-base";
    case ErrorKind::misaligned_base: return "misaligned-base";
    case ErrorKind::duplicate_module: return "duplicate-module";
    case ErrorKind::unknown_module: return "unknown-module";
    case ErrorKind::unresolved_symbol: return "unresolved-symbol";
    case ErrorKind::depth_exceeded: return "depth-exceeded";
    case ErrorKind::invalid_universe: return "invalid-universe";
    case ErrorKind::empty_process: return "empty-process";
    case ErrorKind::no_transfers: return "no-transfers";
    case ErrorKind::malformed_trace: return "malformed-trace";
    case ErrorKind::address_outside_modules: return "address-outside-modules";
    case ErrorKind::mutation_out_of_range: return "mutation-out-of-range";
    case ErrorKind::io_error: return "io-error";
    }
    return "unknown";
}

// All library failures surface as this exception; kind() is the stable
// machine-readable part, what() carries the failing structure.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

inline std::string hex(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    do {
        out.insert(out.begin(), digits[value & 0xf]);
        value >>= 4;
    } while (value != 0);
    return "0x" + out;
}

} // namespace lockdown
