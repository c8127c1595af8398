// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <sstream>

#include "support/fixtures.hpp"

using namespace lockdown;
using namespace lockdown::testing;

namespace {

ModuleImage two_functions(bool stripped) {
    FixtureSpec s;
    s.text_address = 0x100;
    s.code.assign(0x180, 0x90);
    s.symbols = {fn("a", 0x100, 0x20, true), fn("b", 0x200, 0x20, false)};
    s.instructions = {0x104};
    s.stripped = stripped;
    return parse_module(build_fixture(s), "two.so");
}

} // namespace

TEST_CASE("function starts are always valid") {
    const InstructionMap m = derive_instruction_map(two_functions(false));
    CHECK(m.contains(0x100));
    CHECK(m.contains(0x200));
    CHECK(m.contains(0x104));
    CHECK_FALSE(m.contains(0x101));
    CHECK(m.module_path == "two.so");
}

TEST_CASE("a sidecar is adopted verbatim") {
    const ModuleImage image = two_functions(false);
    const BoundarySidecar s{"two.so", {0x100, 0x104, 0x109}};
    const InstructionMap m = derive_instruction_map(image, &s);
    CHECK(m.offsets == std::vector<Address>{0x100, 0x104, 0x109});
    CHECK(m.count_in({0x100, 0x105}) == 2);
}

TEST_CASE("stripped module without sidecar keeps exported starts only") {
    const InstructionMap m = derive_instruction_map(two_functions(true));
    CHECK(m.offsets == std::vector<Address>{0x100});
}

TEST_CASE("sidecar mismatches") {
    const ModuleImage image = two_functions(false);
    const BoundarySidecar other{"other.so", {0x100}};
    CHECK_THROWS_MATCHES(derive_instruction_map(image, &other), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::sidecar_module_mismatch;
                         }));
    const BoundarySidecar outside{"two.so", {0x100, 0x5000}};
    CHECK_THROWS_AS(derive_instruction_map(image, &outside), Error);
}

TEST_CASE("sidecar text format") {
    std::istringstream in("# boundaries\nlibfoo.so 0x100\nlibfoo.so 0x104\n\napp 0x108\n");
    const auto s = parse_sidecar(in);
    REQUIRE(s.size() == 2);
    CHECK(s.at("libfoo.so").offsets == std::vector<Address>{0x100, 0x104});
    CHECK(format_sidecar(s.at("app")) == "app 0x108\n");

    for (const char* bad : {"libfoo.so\n", "libfoo.so 256\n", "libfoo.so 0x104\nlibfoo.so 0x100\n", "a 0x1 extra\n", "a 0xzz\n"}) {
        std::istringstream b(bad);
        INFO(bad);
        CHECK_THROWS_MATCHES(parse_sidecar(b), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                                 return e.kind() == ErrorKind::malformed_sidecar;
                             }));
    }
}

TEST_CASE("fixture sidecar covers functions and declared starts") {
    const NamedFixture f = libfoo(true);
    const BoundarySidecar s = fixture_sidecar(f);
    CHECK(s.module_path == "libfoo.so");
    CHECK(s.offsets == std::vector<Address>{0x100, 0x104, 0x110, 0x120, 0x140});
}
