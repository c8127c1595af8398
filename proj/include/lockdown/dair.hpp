// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dynamic Average Indirect target Reduction over the indirect transfers
// executed so far:
//
//     DAIR(t) = 1/n * sum_j (1 - |T_j| / S_j)
//
// where T_j is the set of targets the policy allowed for transfer j and S_j
// the number of targets an unprotected program could reach at that point.

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lockdown/error.hpp"
#include "lockdown/process_image.hpp"

namespace lockdown {

enum class IndirectKind { call = 0, jump = 1, ret = 2 };
inline constexpr std::array<IndirectKind, 3> indirect_kinds{IndirectKind::call, IndirectKind::jump, IndirectKind::ret};

inline constexpr std::string_view to_string(IndirectKind k) {
    switch (k) {
    case IndirectKind::call: return "indirect-call";
    case IndirectKind::jump: return "indirect-jump";
    case IndirectKind::ret: return "return";
    }
    return "unknown";
}

enum class UniverseMode { exec_bytes, valid_instructions };

inline constexpr std::string_view to_string(UniverseMode m) {
    return m == UniverseMode::exec_bytes ? "exec-bytes" : "valid-instructions";
}

/// S: every executable byte of every loaded module (default), or every
/// valid instruction start.
inline std::uint64_t compute_universe(const ProcessImage& image, UniverseMode mode = UniverseMode::exec_bytes) {
    if (image.modules().empty()) {
        throw Error(ErrorKind::empty_process, "no module is loaded");
    }
    std::uint64_t s = 0;
    for (const auto& m : image.modules()) {
        s += mode == UniverseMode::exec_bytes ? m.image->executable_bytes() : m.imap->size();
    }
    return s;
}

struct TransferRecord {
    std::uint64_t index = 0;
    IndirectKind kind = IndirectKind::call;
    std::uint64_t allowed_set_size = 0;
    std::uint64_t universe = 1;
    std::uint64_t seq = 0;

    bool operator==(const TransferRecord&) const = default;
};

struct DairSample {
    std::uint64_t seq = 0;
    double total = 0;
    std::array<std::optional<double>, 3> per_kind;
};

/// Running DAIR accumulator for one replay.
class DairReport {
  public:
    void record_transfer(IndirectKind kind, std::uint64_t allowed_set_size, std::uint64_t universe, std::uint64_t seq) {
        if (universe < 1) {
            throw Error(ErrorKind::invalid_universe, "universe size must be at least 1");
        }
        const long double term = 1.0L - static_cast<long double>(allowed_set_size) / static_cast<long double>(universe);
        records_.push_back({records_.size() + 1, kind, allowed_set_size, universe, seq});
        sum_ += term;
        const auto k = static_cast<std::size_t>(kind);
        kind_sum_[k] += term;
        ++kind_n_[k];

        DairSample sample{seq, static_cast<double>(sum_ / static_cast<long double>(records_.size())), {}};
        for (std::size_t i = 0; i < 3; ++i) {
            if (kind_n_[i] > 0) {
                sample.per_kind[i] = static_cast<double>(kind_sum_[i] / static_cast<long double>(kind_n_[i]));
            }
        }
        series_.push_back(sample);
    }

    [[nodiscard]] std::uint64_t n() const { return records_.size(); }
    [[nodiscard]] std::uint64_t n(IndirectKind kind) const { return kind_n_[static_cast<std::size_t>(kind)]; }

    /// DAIR over all indirect transfers; empty while n = 0.
    [[nodiscard]] std::optional<double> total() const {
        if (records_.empty()) {
            return std::nullopt;
        }
        return static_cast<double>(sum_ / static_cast<long double>(records_.size()));
    }

    [[nodiscard]] std::optional<double> per_kind(IndirectKind kind) const {
        const auto k = static_cast<std::size_t>(kind);
        if (kind_n_[k] == 0) {
            return std::nullopt;
        }
        return static_cast<double>(kind_sum_[k] / static_cast<long double>(kind_n_[k]));
    }

    [[nodiscard]] const std::vector<TransferRecord>& records() const { return records_; }
    [[nodiscard]] const std::vector<DairSample>& series() const { return series_; }

  private:
    std::vector<TransferRecord> records_;
    std::vector<DairSample> series_;
    long double sum_ = 0;
    std::array<long double, 3> kind_sum_{};
    std::array<std::uint64_t, 3> kind_n_{};
};

inline std::string format_percent(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", value * 100.0);
    return buf;
}

struct DairSummary {
    std::uint64_t n = 0;
    double total = 0;
    std::string total_percent;
    struct Category {
        IndirectKind kind;
        std::uint64_t n;
        double value;
        std::string percent;
    };
    std::vector<Category> categories; // only kinds that occurred
    std::vector<DairSample> series;
};

/// End-of-run presentation: totals and per-category values as two-decimal
/// percentages plus the full series.
inline DairSummary finalize(const DairReport& report) {
    if (report.n() == 0) {
        throw Error(ErrorKind::no_transfers, "no indirect transfers were executed");
    }
    DairSummary s;
    s.n = report.n();
    s.total = *report.total();
    s.total_percent = format_percent(s.total);
    for (IndirectKind k : indirect_kinds) {
        if (auto v = report.per_kind(k)) {
            s.categories.push_back({k, report.n(k), *v, format_percent(*v)});
        }
    }
    s.series = report.series();
    return s;
}

/// CSV export of the series: `seq,dair_total,dair_call,dair_jump,dair_ret`.
/// Categories without transfers yet are left empty.
inline std::string series_csv(const DairReport& report) {
    std::string out = "seq,dair_total,dair_call,dair_jump,dair_ret\n";
    char buf[64];
    for (const auto& s : report.series()) {
        out += std::to_string(s.seq);
        std::snprintf(buf, sizeof buf, ",%.17g", s.total);
        out += buf;
        for (const auto& v : s.per_kind) {
            out += ',';
            if (v) {
                std::snprintf(buf, sizeof buf, "%.17g", *v);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

} // namespace lockdown
