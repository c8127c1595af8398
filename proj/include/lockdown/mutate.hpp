// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "lockdown/error.hpp"
#include "lockdown/replay.hpp"

namespace lockdown {

enum class MutationClass {
    return_redirect,
    call_non_imported,
    call_mid_instruction,
    jump_mid_instruction,
    jump_cross_module,
    jump_tail_call,
};

inline constexpr std::array<MutationClass, 6> all_mutation_classes{
    MutationClass::return_redirect,      MutationClass::call_non_imported, MutationClass::call_mid_instruction,
    MutationClass::jump_mid_instruction, MutationClass::jump_cross_module, MutationClass::jump_tail_call};

inline constexpr std::string_view to_string(MutationClass c) {
    switch (c) {
    case MutationClass::return_redirect: return "return-redirect";
    case MutationClass::call_non_imported: return "call-non-imported";
    case MutationClass::call_mid_instruction: return "call-mid-instruction";
    case MutationClass::jump_mid_instruction: return "jump-mid-instruction";
    case MutationClass::jump_cross_module: return "jump-cross-module";
    case MutationClass::jump_tail_call: return "jump-tail-call";
    }
    return "unknown";
}

/// Accepts the long names and the short forms ret, call and jump.
inline std::optional<MutationClass> mutation_class_from(std::string_view name) {
    if (name == "ret") {
        return MutationClass::return_redirect;
    }
    if (name == "call") {
        return MutationClass::call_non_imported;
    }
    if (name == "jump") {
        return MutationClass::jump_mid_instruction;
    }
    for (MutationClass c : all_mutation_classes) {
        if (to_string(c) == name) {
            return c;
        }
    }
    return std::nullopt;
}

/// Where a stack spray would point a corrupted return address.
inline constexpr Address sprayed_return_address = 0x41414141;

struct MutationSpec {
    MutationClass mutation = MutationClass::return_redirect;
    std::size_t index = 0; // among the eligible events of the class, in trace order
};

struct Mutation {
    std::vector<TraceEvent> trace;
    std::uint64_t seq = 0;
    Address original = 0;
    Address replacement = 0;
    Decision expected_decision = Decision::deny;
    Rule expected_rule = Rule::return_shadow_match;
};

inline EventKind mutated_event_kind(MutationClass c) {
    switch (c) {
    case MutationClass::return_redirect: return EventKind::ret;
    case MutationClass::call_non_imported:
    case MutationClass::call_mid_instruction: return EventKind::indirect_call;
    default: return EventKind::indirect_jump;
    }
}

inline std::pair<Decision, Rule> expected_outcome(MutationClass c) {
    switch (c) {
    case MutationClass::return_redirect: return {Decision::deny, Rule::return_shadow_match};
    case MutationClass::call_non_imported: return {Decision::deny, Rule::call_import};
    case MutationClass::call_mid_instruction:
    case MutationClass::jump_mid_instruction: return {Decision::deny, Rule::valid_instruction};
    case MutationClass::jump_cross_module: return {Decision::deny, Rule::jump_tail_call};
    case MutationClass::jump_tail_call: return {Decision::allow, Rule::jump_tail_call};
    }
    return {Decision::deny, Rule::call_import};
}

namespace detail {

// First executable byte at or after `from` in the module holding it that
// is not an instruction start.
inline std::optional<Address> mid_instruction(const ProcessImage& image, Address from) {
    const LoadedModule* m = image.module_at(from);
    if (m == nullptr) {
        return std::nullopt;
    }
    for (const auto& r : m->executable) {
        for (Address a = std::max(r.start, from); a < r.end; ++a) {
            if (!m->is_valid_instruction(a) && !image.is_plt_slot(*m, a)) {
                return a;
            }
        }
    }
    return std::nullopt;
}

inline std::optional<Address> foreign_non_target(const ProcessImage& image, CfiPolicy& policy, const LoadedModule& source) {
    const auto& targets = policy.call_targets(image, source);
    for (const auto& m : image.modules()) {
        if (m.id == source.id) {
            continue;
        }
        for (const auto& f : m.known_functions) {
            const Address a = m.base + f.start;
            if (m.is_valid_instruction(a) && !std::binary_search(targets.begin(), targets.end(), a)) {
                return a;
            }
        }
    }
    // no spare function start; any foreign instruction will do
    for (const auto& m : image.modules()) {
        if (m.id == source.id) {
            continue;
        }
        for (Address a : m.valid_instructions()) {
            if (!std::binary_search(targets.begin(), targets.end(), a) && !image.is_plt_slot(m, a)) {
                return a;
            }
        }
    }
    return std::nullopt;
}

inline std::optional<Address> foreign_target(const ProcessImage& image, CfiPolicy& policy, const LoadedModule& source) {
    for (Address a : policy.call_targets(image, source)) {
        if (!source.contains(a) && image.module_at(a) != nullptr) {
            return a;
        }
    }
    return std::nullopt;
}

} // namespace detail

/// Redirects the target of one indirect transfer in a clean trace. The
/// process image at the chosen event is reconstructed by replaying the
/// prefix, so the replacement is valid for that point in time.
inline Mutation generate_adversarial_trace(const std::vector<TraceEvent>& base, const MutationSpec& spec,
                                           const ModuleProvider& provider, const PolicyConfig& policy_config = {}) {
    Replayer replayer(provider, ReplayConfig{false, UniverseMode::exec_bytes, policy_config, default_shadow_depth, false});
    CfiPolicy policy(policy_config);
    const EventKind kind = mutated_event_kind(spec.mutation);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        const TraceEvent& e = base[i];
        if (e.kind == kind && seen++ == spec.index) {
            const ProcessImage& image = replayer.image();
            const LoadedModule* source = image.module_at(e.src);
            std::optional<Address> replacement;
            switch (spec.mutation) {
            case MutationClass::return_redirect: replacement = sprayed_return_address; break;
            case MutationClass::call_mid_instruction:
            case MutationClass::jump_mid_instruction: replacement = detail::mid_instruction(image, e.dst); break;
            case MutationClass::call_non_imported:
            case MutationClass::jump_cross_module:
                if (source != nullptr) {
                    replacement = detail::foreign_non_target(image, policy, *source);
                }
                break;
            case MutationClass::jump_tail_call:
                if (source != nullptr) {
                    replacement = detail::foreign_target(image, policy, *source);
                }
                break;
            }
            if (!replacement) {
                throw Error(ErrorKind::mutation_out_of_range, std::string("no ") + std::string(to_string(spec.mutation)) +
                                                                  " target exists at seq " + std::to_string(e.seq));
            }
            Mutation out;
            out.trace = base;
            out.trace[i].dst = *replacement;
            out.seq = e.seq;
            out.original = e.dst;
            out.replacement = *replacement;
            std::tie(out.expected_decision, out.expected_rule) = expected_outcome(spec.mutation);
            return out;
        }
        replayer.step(e);
    }
    throw Error(ErrorKind::mutation_out_of_range, "trace has " + std::to_string(seen) + " " +
                                                      std::string(to_string(kind)) + " events; index " +
                                                      std::to_string(spec.index) + " requested");
}

} // namespace lockdown
