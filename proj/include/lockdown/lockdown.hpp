// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lockdown/callback_scan.hpp"
#include "lockdown/dair.hpp"
#include "lockdown/elf/fixture.hpp"
#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/elf/parse.hpp"
#include "lockdown/error.hpp"
#include "lockdown/fixture_json.hpp"
#include "lockdown/io.hpp"
#include "lockdown/loaded_module.hpp"
#include "lockdown/mutate.hpp"
#include "lockdown/policy.hpp"
#include "lockdown/process_image.hpp"
#include "lockdown/replay.hpp"
#include "lockdown/shadow_stack.hpp"
#include "lockdown/trace.hpp"
