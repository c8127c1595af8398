// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "lockdown/shadow_stack.hpp"

using namespace lockdown;

TEST_CASE("push records the return address") {
    ShadowStack s;
    s.push_call(0x100, 0x105);
    CHECK(s.depth() == 1);
    CHECK(s.top().return_address == 0x105);
    CHECK(s.top().call_site == 0x100);
}

TEST_CASE("frames come back in LIFO order") {
    ShadowStack s;
    s.push_call(0x100, 0x105);
    s.push_call(0x200, 0x205);
    CHECK(s.pop_and_check(0x205).allowed());
    CHECK(s.pop_and_check(0x105).allowed());
    CHECK(s.empty());
}

TEST_CASE("depth limit") {
    ShadowStack s(2);
    s.push_call(1, 2);
    s.push_call(3, 4);
    CHECK_THROWS_MATCHES(s.push_call(5, 6), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::depth_exceeded;
                         }));
    CHECK(s.depth() == 2);
}

TEST_CASE("returns must match the shadow copy") {
    ShadowStack s;
    s.push_call(0x100, 0x105);
    const Verdict bad = s.pop_and_check(0x2000);
    CHECK_FALSE(bad.allowed());
    CHECK(bad.rule == Rule::return_shadow_match);
    CHECK(bad.target_set_size == 1);
    CHECK(s.depth() == 1);
    const Verdict good = s.pop_and_check(0x105);
    CHECK(good.allowed());
    CHECK(s.empty());
}

TEST_CASE("return on an empty stack is denied") {
    ShadowStack s;
    const Verdict v = s.pop_and_check(0x105);
    CHECK_FALSE(v.allowed());
    CHECK(v.rule == Rule::return_shadow_match);
}

TEST_CASE("unwinding") {
    auto abc = [] {
        ShadowStack s;
        s.push_call(0x10, 0xa);
        s.push_call(0x20, 0xb);
        s.push_call(0x30, 0xc);
        return s;
    };
    SECTION("to the bottom frame") {
        ShadowStack s = abc();
        CHECK(s.unwind_to(0xa));
        REQUIRE(s.depth() == 1);
        CHECK(s.top().return_address == 0xa);
    }
    SECTION("to an address not on the stack") {
        ShadowStack s = abc();
        const ShadowStack before = s;
        CHECK_FALSE(s.unwind_to(0xd));
        CHECK(s == before);
    }
    SECTION("to the top frame") {
        ShadowStack s = abc();
        CHECK(s.unwind_to(0xc));
        CHECK(s.depth() == 3);
    }
    SECTION("nearest match wins") {
        ShadowStack s;
        s.push_call(1, 0xa);
        s.push_call(2, 0xb);
        s.push_call(3, 0xa);
        s.push_call(4, 0xc);
        CHECK(s.unwind_to(0xa));
        CHECK(s.depth() == 3);
    }
}

TEST_CASE("discard_top on an empty stack is harmless") {
    ShadowStack s;
    s.discard_top();
    CHECK(s.empty());
}
