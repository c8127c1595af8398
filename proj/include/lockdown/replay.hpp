// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "lockdown/dair.hpp"
#include "lockdown/error.hpp"
#include "lockdown/policy.hpp"
#include "lockdown/process_image.hpp"
#include "lockdown/shadow_stack.hpp"
#include "lockdown/trace.hpp"

namespace lockdown {

struct ReplayConfig {
    bool abort_on_violation = false;
    UniverseMode universe_mode = UniverseMode::exec_bytes;
    PolicyConfig policy;
    std::size_t max_shadow_depth = default_shadow_depth;
    bool use_cache = true;
};

/// What a load event needs: the parsed image and its instruction map.
struct ModuleArtifacts {
    std::shared_ptr<const ModuleImage> image;
    std::shared_ptr<const InstructionMap> imap;
};

using ModuleProvider = std::function<ModuleArtifacts(const std::string& path)>;

struct EventVerdict {
    std::uint64_t seq = 0;
    std::uint32_t tid = 0;
    EventKind kind = EventKind::load;
    Address src = 0;
    Address dst = 0;
    Verdict verdict;

    bool operator==(const EventVerdict&) const = default;
};

struct Violation {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::load;
    Rule rule = Rule::call_import;
    std::string detail;

    bool operator==(const Violation&) const = default;
};

/// One process-image state change caused by a load or unload.
struct EpochRecord {
    std::uint64_t epoch = 0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::load;
    std::string path;
    std::size_t modules = 0;
    std::uint64_t universe = 0; // 0 once the image is empty
};

enum class Outcome { clean, violations, aborted };

inline constexpr std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::clean: return "clean";
    case Outcome::violations: return "violations";
    case Outcome::aborted: return "aborted";
    }
    return "unknown";
}

struct KindCounts {
    std::uint64_t allow = 0;
    std::uint64_t deny = 0;
};

struct EnforcementReport {
    std::vector<EventVerdict> verdicts;
    std::vector<Violation> violations;
    DairReport dair;
    std::map<EventKind, KindCounts> counts;
    std::vector<EpochRecord> epochs;
    Outcome outcome = Outcome::clean;
    std::optional<std::uint64_t> aborted_at;
    std::uint64_t events = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
};

/// Drives the process image, policy and per-thread shadow stacks through a
/// trace, one event at a time.
class Replayer {
  public:
    Replayer(ModuleProvider provider, ReplayConfig config = {})
        : provider_(std::move(provider)), config_(std::move(config)), policy_(config_.policy) {}

    /// Applies one event. Returns false once the replay has aborted.
    bool step(const TraceEvent& e) {
        if (report_.outcome == Outcome::aborted) {
            return false;
        }
        ++report_.events;
        switch (e.kind) {
        case EventKind::load: {
            auto artifacts = provider_(e.path);
            image_.load_module(std::move(artifacts.image), e.base, std::move(artifacts.imap));
            note_epoch(e);
            return true;
        }
        case EventKind::unload: {
            const LoadedModule* m = image_.find_by_path(e.path);
            if (m == nullptr) {
                throw Error(ErrorKind::unknown_module, "seq " + std::to_string(e.seq) + ": " + e.path + " is not loaded");
            }
            image_.unload_module(m->id);
            note_epoch(e);
            return true;
        }
        case EventKind::direct_call:
        case EventKind::indirect_call:
        case EventKind::plt_call: {
            require_source(e);
            const bool indirect = e.kind == EventKind::indirect_call;
            Verdict v = indirect ? policy_.check_call(image_, cache(), e.src, e.dst, true)
                                 : translated(e, [&] { return policy_.check_call(image_, nullptr, e.src, e.dst, false); });
            shadow(e.tid).push_call(e.src, e.src + e.length);
            if (indirect) {
                record_dair(IndirectKind::call, v.target_set_size, e.seq);
            }
            return finish(e, std::move(v));
        }
        case EventKind::direct_jump:
        case EventKind::indirect_jump: {
            require_source(e);
            const bool indirect = e.kind == EventKind::indirect_jump;
            Verdict v = indirect ? policy_.check_jump(image_, cache(), e.src, e.dst, true)
                                 : translated(e, [&] { return policy_.check_jump(image_, nullptr, e.src, e.dst, false); });
            if (indirect) {
                record_dair(IndirectKind::jump, v.target_set_size, e.seq);
            }
            return finish(e, std::move(v));
        }
        case EventKind::ret: {
            require_source(e);
            ShadowStack& s = shadow(e.tid);
            Verdict v = check_return(s, e.dst);
            if (!v.allowed()) {
                // execution resumes at the shadow copy
                s.discard_top();
            }
            record_dair(IndirectKind::ret, 1, e.seq);
            return finish(e, std::move(v));
        }
        case EventKind::exception_unwind: {
            ShadowStack& s = shadow(e.tid);
            Verdict v = s.unwind_to(e.target)
                            ? Verdict::allow(Rule::return_shadow_match, 1, "unwound to " + hex(e.target))
                            : Verdict::deny(Rule::unwind_miss, 1, "no shadow frame returns to " + hex(e.target));
            return finish(e, std::move(v));
        }
        case EventKind::code_write:
            return finish(e, Verdict::deny(Rule::self_modifying_code, 0, "write to code at " + hex(e.target)));
        }
        return true;
    }

    [[nodiscard]] const EnforcementReport& report() const { return report_; }
    [[nodiscard]] const ProcessImage& image() const { return image_; }

    [[nodiscard]] const ShadowStack* shadow_stack(std::uint32_t tid) const {
        auto it = shadows_.find(tid);
        return it == shadows_.end() ? nullptr : &it->second;
    }

    EnforcementReport take_report() {
        if (cache_) {
            report_.cache_hits = cache_->hits();
            report_.cache_misses = cache_->misses();
        }
        return std::move(report_);
    }

  private:
    FastPathCache* cache() {
        if (!config_.use_cache) {
            return nullptr;
        }
        if (!cache_) {
            cache_ = std::make_unique<FastPathCache>();
        }
        return cache_.get();
    }

    ShadowStack& shadow(std::uint32_t tid) {
        auto it = shadows_.find(tid);
        if (it == shadows_.end()) {
            it = shadows_.emplace(tid, ShadowStack(config_.max_shadow_depth)).first;
        }
        return it->second;
    }

    void require_source(const TraceEvent& e) const {
        if (image_.module_at(e.src) == nullptr) {
            throw Error(ErrorKind::address_outside_modules,
                        "seq " + std::to_string(e.seq) + ": source " + hex(e.src) + " is not inside a loaded module");
        }
    }

    // Direct transfers are decided once per (src, dst, kind) and image epoch.
    template <class Decide>
    Verdict translated(const TraceEvent& e, Decide&& decide) {
        const auto key = std::make_tuple(e.src, e.dst, e.kind);
        if (translated_epoch_ != image_.epoch()) {
            translated_.clear();
            translated_epoch_ = image_.epoch();
        }
        if (auto it = translated_.find(key); it != translated_.end()) {
            return it->second;
        }
        Verdict v = decide();
        translated_.emplace(key, v);
        return v;
    }

    void record_dair(IndirectKind kind, std::uint64_t size, std::uint64_t seq) {
        if (universe_epoch_ != image_.epoch() || !universe_) {
            universe_ = compute_universe(image_, config_.universe_mode);
            universe_epoch_ = image_.epoch();
        }
        report_.dair.record_transfer(kind, size, *universe_, seq);
    }

    void note_epoch(const TraceEvent& e) {
        EpochRecord r{image_.epoch(), e.seq, e.kind, e.path, image_.modules().size(), 0};
        if (!image_.modules().empty()) {
            r.universe = compute_universe(image_, config_.universe_mode);
        }
        report_.epochs.push_back(std::move(r));
    }

    bool finish(const TraceEvent& e, Verdict v) {
        auto& counts = report_.counts[e.kind];
        if (v.allowed()) {
            ++counts.allow;
        } else {
            ++counts.deny;
            report_.violations.push_back({e.seq, e.kind, v.rule, v.reason});
            report_.outcome = Outcome::violations;
            if (config_.abort_on_violation) {
                report_.outcome = Outcome::aborted;
                report_.aborted_at = e.seq;
            }
        }
        const Address dst = e.kind == EventKind::exception_unwind || e.kind == EventKind::code_write ? e.target : e.dst;
        report_.verdicts.push_back({e.seq, e.tid, e.kind, e.src, dst, std::move(v)});
        return report_.outcome != Outcome::aborted;
    }

    ModuleProvider provider_;
    ReplayConfig config_;
    CfiPolicy policy_;
    ProcessImage image_;
    std::unique_ptr<FastPathCache> cache_;
    std::map<std::uint32_t, ShadowStack> shadows_;
    std::map<std::tuple<Address, Address, EventKind>, Verdict> translated_;
    std::uint64_t translated_epoch_ = 0;
    std::optional<std::uint64_t> universe_;
    std::uint64_t universe_epoch_ = 0;
    EnforcementReport report_;
};

inline EnforcementReport replay(const std::vector<TraceEvent>& trace, ModuleProvider provider, ReplayConfig config = {}) {
    Replayer r(std::move(provider), std::move(config));
    for (const auto& e : trace) {
        if (!r.step(e)) {
            break;
        }
    }
    return r.take_report();
}

namespace detail {

inline nlohmann::ordered_json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

} // namespace detail

inline nlohmann::ordered_json dair_to_json(const DairReport& dair) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["n"] = dair.n();
    j["total"] = detail::optional_number(dair.total());
    j["total_percent"] = dair.total() ? ordered_json(format_percent(*dair.total())) : ordered_json(nullptr);
    ordered_json per = ordered_json::object();
    for (IndirectKind k : indirect_kinds) {
        ordered_json c;
        c["n"] = dair.n(k);
        c["value"] = detail::optional_number(dair.per_kind(k));
        c["percent"] = dair.per_kind(k) ? ordered_json(format_percent(*dair.per_kind(k))) : ordered_json(nullptr);
        per[std::string(to_string(k))] = std::move(c);
    }
    j["per_category"] = std::move(per);
    ordered_json series = ordered_json::array();
    for (const auto& s : dair.series()) {
        ordered_json row;
        row["seq"] = s.seq;
        row["total"] = s.total;
        row["call"] = detail::optional_number(s.per_kind[0]);
        row["jump"] = detail::optional_number(s.per_kind[1]);
        row["ret"] = detail::optional_number(s.per_kind[2]);
        series.push_back(std::move(row));
    }
    j["series"] = std::move(series);
    return j;
}

inline nlohmann::ordered_json report_to_json(const EnforcementReport& r) {
    using nlohmann::ordered_json;
    ordered_json j;
    ordered_json summary;
    summary["outcome"] = std::string(to_string(r.outcome));
    summary["events"] = r.events;
    summary["violations"] = r.violations.size();
    summary["aborted_at"] = r.aborted_at ? ordered_json(*r.aborted_at) : ordered_json(nullptr);
    ordered_json per_kind = ordered_json::object();
    for (const auto& [kind, c] : r.counts) {
        per_kind[std::string(to_string(kind))] = {{"allow", c.allow}, {"deny", c.deny}};
    }
    summary["per_kind"] = std::move(per_kind);
    summary["cache"] = {{"hits", r.cache_hits}, {"misses", r.cache_misses}};
    j["summary"] = std::move(summary);

    ordered_json violations = ordered_json::array();
    for (const auto& v : r.violations) {
        violations.push_back({{"seq", v.seq}, {"kind", std::string(to_string(v.kind))}, {"rule", std::string(to_string(v.rule))},
                              {"detail", v.detail}});
    }
    j["violations"] = std::move(violations);
    j["dair"] = dair_to_json(r.dair);

    ordered_json epochs = ordered_json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"seq", e.seq},
                          {"event", std::string(to_string(e.kind))},
                          {"path", e.path},
                          {"modules", e.modules},
                          {"universe", e.universe}});
    }
    j["epochs"] = std::move(epochs);

    ordered_json verdicts = ordered_json::array();
    for (const auto& v : r.verdicts) {
        verdicts.push_back({{"seq", v.seq},
                            {"tid", v.tid},
                            {"kind", std::string(to_string(v.kind))},
                            {"src", is_transfer(v.kind) ? ordered_json(hex(v.src)) : ordered_json(nullptr)},
                            {"dst", hex(v.dst)},
                            {"decision", std::string(to_string(v.verdict.decision))},
                            {"rule", std::string(to_string(v.verdict.rule))},
                            {"target_set_size", v.verdict.target_set_size}});
    }
    j["verdicts"] = std::move(verdicts);
    return j;
}

} // namespace lockdown
