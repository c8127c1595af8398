// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lockdown/error.hpp"
#include "lockdown/policy.hpp"

namespace lockdown {

struct ShadowFrame {
    Address return_address = 0;
    Address call_site = 0;
    bool operator==(const ShadowFrame&) const = default;
};

inline constexpr std::size_t default_shadow_depth = 1'000'000;

/// Trusted return-address stack. Frames are pushed by calls and removed
/// only by a matching return or by exception unwinding.
class ShadowStack {
  public:
    explicit ShadowStack(std::size_t max_depth = default_shadow_depth) : max_depth_(max_depth) {}

    void push_call(Address call_site, Address return_address) {
        if (frames_.size() >= max_depth_) {
            throw Error(ErrorKind::depth_exceeded, "shadow stack limit of " + std::to_string(max_depth_) +
                                                       " frames reached at call site " + hex(call_site));
        }
        frames_.push_back({return_address, call_site});
    }

    /// Allows the return iff the top frame holds `claimed`, popping it.
    /// A mismatch leaves the stack untouched.
    Verdict pop_and_check(Address claimed) {
        if (frames_.empty()) {
            return Verdict::deny(Rule::return_shadow_match, 1, "return to " + hex(claimed) + " with an empty shadow stack");
        }
        const ShadowFrame top = frames_.back();
        if (top.return_address != claimed) {
            return Verdict::deny(Rule::return_shadow_match, 1,
                                 "return to " + hex(claimed) + " but shadow stack expects " + hex(top.return_address));
        }
        frames_.pop_back();
        return Verdict::allow(Rule::return_shadow_match, 1);
    }

    /// Exception unwinding: drops frames above the nearest one whose return
    /// address is `target_return`. Nothing changes when no frame matches.
    bool unwind_to(Address target_return) {
        for (std::size_t i = frames_.size(); i-- > 0;) {
            if (frames_[i].return_address == target_return) {
                frames_.resize(i + 1);
                return true;
            }
        }
        return false;
    }

    /// Drops the top frame; used when a denied return is resumed at the
    /// shadow copy's address.
    void discard_top() {
        if (!frames_.empty()) {
            frames_.pop_back();
        }
    }

    [[nodiscard]] std::size_t depth() const { return frames_.size(); }
    [[nodiscard]] bool empty() const { return frames_.empty(); }
    [[nodiscard]] std::size_t max_depth() const { return max_depth_; }
    [[nodiscard]] const ShadowFrame& top() const { return frames_.back(); }
    [[nodiscard]] std::span<const ShadowFrame> frames() const { return frames_; }

    bool operator==(const ShadowStack&) const = default;

  private:
    std::vector<ShadowFrame> frames_;
    std::size_t max_depth_;
};

/// Return check, delegated to the shadow stack.
inline Verdict check_return(ShadowStack& shadow, Address claimed_return) { return shadow.pop_and_check(claimed_return); }

} // namespace lockdown
