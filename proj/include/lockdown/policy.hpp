// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lockdown/error.hpp"
#include "lockdown/process_image.hpp"

namespace lockdown {

enum class Decision { allow, deny };

enum class Rule {
    call_import,
    call_local,
    jump_intra_function,
    jump_tail_call,
    return_shadow_match,
    callback_admitted,
    plt_direct,
    valid_instruction,
    allowlisted,
    unwind_miss,
    self_modifying_code,
};

inline constexpr std::string_view to_string(Decision d) { return d == Decision::allow ? "allow" : "deny"; }

inline constexpr std::string_view to_string(Rule r) {
    switch (r) {
    case Rule::call_import: return "call-import";
    case Rule::call_local: return "call-local";
    case Rule::jump_intra_function: return "jump-intra-function";
    case Rule::jump_tail_call: return "jump-tail-call";
    case Rule::return_shadow_match: return "return-shadow-match";
    case Rule::callback_admitted: return "callback-admitted";
    case Rule::plt_direct: return "plt-direct";
    case Rule::valid_instruction: return "valid-instruction";
    case Rule::allowlisted: return "allowlisted";
    case Rule::unwind_miss: return "unwind-miss";
    case Rule::self_modifying_code: return "self-modifying-code";
    }
    return "unknown";
}

/// Outcome of one transfer check. For allows, `rule` names the grant that
/// matched; for denies, the rule that was violated. `target_set_size` is
/// |T_j|, the number of addresses this transfer could legally have reached.
struct Verdict {
    Decision decision = Decision::deny;
    Rule rule = Rule::call_import;
    std::string reason;
    std::uint64_t target_set_size = 0;

    [[nodiscard]] bool allowed() const { return decision == Decision::allow; }
    bool operator==(const Verdict&) const = default;

    static Verdict allow(Rule rule, std::uint64_t size, std::string reason = {}) {
        return {Decision::allow, rule, std::move(reason), size};
    }
    static Verdict deny(Rule rule, std::uint64_t size, std::string reason) {
        return {Decision::deny, rule, std::move(reason), size};
    }
};

enum class TransferKind { call, jump, ret };

/// Fast-path key. `scope` is the source function extent for jumps (the
/// allowed set depends on it) and empty for calls.
struct CacheKey {
    ModuleId source;
    Interval scope;
    Address destination = 0;
    TransferKind kind = TransferKind::call;

    auto operator<=>(const CacheKey&) const = default;
};

/// Already verified {source scope, destination} pairs, valid for a single
/// process-image epoch.
class FastPathCache {
  public:
    [[nodiscard]] std::optional<Verdict> lookup(const CacheKey& key, std::uint64_t epoch) {
        sync(epoch);
        auto it = entries_.find(key);
        if (it == entries_.end()) {
            ++misses_;
            return std::nullopt;
        }
        ++hits_;
        return it->second;
    }

    void insert(const CacheKey& key, const Verdict& verdict, std::uint64_t epoch) {
        sync(epoch);
        entries_[key] = verdict;
    }

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] std::uint64_t hits() const { return hits_; }
    [[nodiscard]] std::uint64_t misses() const { return misses_; }
    [[nodiscard]] std::uint64_t bound_epoch() const { return epoch_; }

  private:
    void sync(std::uint64_t epoch) {
        if (epoch != epoch_) {
            entries_.clear();
            epoch_ = epoch;
        }
    }

    std::map<CacheKey, Verdict> entries_;
    std::uint64_t epoch_ = 0;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

/// Extra inter-module calls permitted without an import relation, e.g. the
/// handful of libc internals that call non-imported symbols.
struct AllowlistEntry {
    std::string module_path;
    std::string symbol;
};

struct PolicyConfig {
    std::vector<AllowlistEntry> allowlist;
};

/// `<module-path> <symbol>` per line; '#' starts a comment line.
inline std::vector<AllowlistEntry> parse_allowlist(std::istream& in) {
    std::vector<AllowlistEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream fields(line);
        AllowlistEntry e;
        std::string extra;
        if (!(fields >> e.module_path >> e.symbol) || (fields >> extra)) {
            throw Error(ErrorKind::malformed_allowlist, "line " + std::to_string(line_no) + ": expected '<module-path> <symbol>'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Allow/deny decisions for calls and jumps against one process image.
/// Returns are decided by the shadow stack.
class CfiPolicy {
  public:
    explicit CfiPolicy(PolicyConfig config = {}) : config_(std::move(config)) {}

    Verdict check_call(const ProcessImage& image, FastPathCache* cache, Address src, Address dst, bool indirect) {
        const LoadedModule& from = source_module(image, src);
        const CacheKey key{from.id, {}, dst, TransferKind::call};
        if (indirect && cache != nullptr) {
            if (auto hit = cache->lookup(key, image.epoch())) {
                return *hit;
            }
        }
        Verdict v = decide_call(image, from, dst);
        if (indirect && cache != nullptr && v.allowed()) {
            cache->insert(key, v, image.epoch());
        }
        return v;
    }

    Verdict check_jump(const ProcessImage& image, FastPathCache* cache, Address src, Address dst, bool indirect = true) {
        const LoadedModule& from = source_module(image, src);
        const auto extent = from.function_extent(src);
        const CacheKey key{from.id, extent.value_or(Interval{}), dst, TransferKind::jump};
        if (indirect && cache != nullptr) {
            if (auto hit = cache->lookup(key, image.epoch())) {
                return *hit;
            }
        }
        Verdict v = decide_jump(image, from, extent, dst);
        if (indirect && cache != nullptr && v.allowed()) {
            cache->insert(key, v, image.epoch());
        }
        return v;
    }

    /// Sorted set of call targets allowed from `source` at the image's
    /// current state: imported exports, own functions (or all own
    /// instructions when stripped), admitted callbacks and allowlisted
    /// symbols.
    const std::vector<Address>& call_targets(const ProcessImage& image, const LoadedModule& source) {
        if (indexed_revision_ != image.revision()) {
            index_.clear();
            indexed_revision_ = image.revision();
        }
        auto [it, fresh] = index_.try_emplace(source.id);
        if (!fresh) {
            return it->second;
        }
        auto& targets = it->second;
        const auto& table = image.table();
        for (const auto& [addr, entry] : table.call_targets) {
            if (entry.callback || entry.sources.count(source.id) != 0) {
                targets.push_back(addr);
            }
        }
        if (table.section_granule_modules.count(source.id) != 0) {
            const auto own = source.valid_instructions();
            targets.insert(targets.end(), own.begin(), own.end());
        }
        for (const auto& a : allowlisted_targets(image, source)) {
            targets.push_back(a);
        }
        std::sort(targets.begin(), targets.end());
        targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
        return targets;
    }

    [[nodiscard]] const PolicyConfig& config() const { return config_; }

  private:
    static const LoadedModule& source_module(const ProcessImage& image, Address src) {
        const LoadedModule* m = image.module_at(src);
        if (m == nullptr) {
            throw Error(ErrorKind::address_outside_modules, "transfer source " + hex(src) + " is not inside a loaded module");
        }
        return *m;
    }

    std::vector<Address> allowlisted_targets(const ProcessImage& image, const LoadedModule& source) const {
        std::vector<Address> out;
        for (const auto& e : config_.allowlist) {
            if (e.module_path != source.path()) {
                continue;
            }
            for (const auto& m : image.modules()) {
                if (auto a = detail::exported_function(m, e.symbol)) {
                    out.push_back(*a);
                }
            }
        }
        return out;
    }

    Rule grant_rule(const ProcessImage& image, const LoadedModule& from, Address dst) const {
        const CallTarget* entry = image.table().find(dst);
        std::uint8_t mask = 0;
        if (entry != nullptr) {
            if (auto s = entry->sources.find(from.id); s != entry->sources.end()) {
                mask = s->second;
            }
        }
        if (has(mask, Provenance::local_symbol)) {
            return Rule::call_local;
        }
        if (image.table().section_granule_modules.count(from.id) != 0 && from.contains(dst)) {
            return Rule::call_local;
        }
        if (has(mask, Provenance::export_import)) {
            return Rule::call_import;
        }
        if (entry != nullptr && entry->callback) {
            return Rule::callback_admitted;
        }
        return Rule::allowlisted;
    }

    Verdict decide_call(const ProcessImage& image, const LoadedModule& from, Address dst) {
        const auto& targets = call_targets(image, from);
        const std::uint64_t size = targets.size();
        if (image.is_plt_slot(from, dst)) {
            if (auto bound = image.plt_binding(from.id, dst)) {
                return Verdict::allow(Rule::plt_direct, size, "PLT slot bound to " + hex(*bound));
            }
            return Verdict::deny(Rule::plt_direct, size, "PLT slot " + hex(dst) + " names an unresolved symbol");
        }
        if (!image.is_valid_instruction(dst)) {
            return Verdict::deny(Rule::valid_instruction, size, hex(dst) + " is not a valid instruction start");
        }
        if (std::binary_search(targets.begin(), targets.end(), dst)) {
            return Verdict::allow(grant_rule(image, from, dst), size);
        }
        if (from.contains(dst)) {
            return Verdict::deny(Rule::call_local, size, hex(dst) + " is not a function of " + from.path());
        }
        const LoadedModule* to = image.module_at(dst);
        return Verdict::deny(Rule::call_import, size, hex(dst) + " in " + to->path() + " is not imported by " + from.path());
    }

    Verdict decide_jump(const ProcessImage& image, const LoadedModule& from, const std::optional<Interval>& extent, Address dst) {
        const auto& targets = call_targets(image, from);
        std::uint64_t size = targets.size();
        if (extent) {
            // |T| is the union of the extent's instructions and the call targets
            const auto& offsets = from.imap->offsets;
            for (auto it = std::lower_bound(offsets.begin(), offsets.end(), extent->start - from.base);
                 it != offsets.end() && from.base + *it < extent->end; ++it) {
                if (!std::binary_search(targets.begin(), targets.end(), from.base + *it)) {
                    ++size;
                }
            }
        }
        if (image.is_plt_slot(from, dst)) {
            if (auto bound = image.plt_binding(from.id, dst)) {
                return Verdict::allow(Rule::plt_direct, size, "PLT slot bound to " + hex(*bound));
            }
            return Verdict::deny(Rule::plt_direct, size, "PLT slot " + hex(dst) + " names an unresolved symbol");
        }
        if (!image.is_valid_instruction(dst)) {
            return Verdict::deny(Rule::valid_instruction, size, hex(dst) + " is not a valid instruction start");
        }
        if (extent && extent->contains(dst)) {
            return Verdict::allow(Rule::jump_intra_function, size);
        }
        if (std::binary_search(targets.begin(), targets.end(), dst)) {
            return Verdict::allow(Rule::jump_tail_call, size);
        }
        if (from.contains(dst)) {
            return Verdict::deny(Rule::jump_intra_function, size, hex(dst) + " leaves the current function and is no call target");
        }
        return Verdict::deny(Rule::jump_tail_call, size, hex(dst) + " is in another module and is no allowed call target");
    }

    PolicyConfig config_;
    std::map<ModuleId, std::vector<Address>> index_;
    std::uint64_t indexed_revision_ = 0;
};

} // namespace lockdown
