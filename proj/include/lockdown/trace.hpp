// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Control-flow event traces: one JSON object per line, addresses as hex
// strings, sequence numbers strictly increasing from 1.
//
//   {"seq":1,"tid":0,"kind":"load","path":"libfoo.so","base":"0x8048000"}
//   {"seq":2,"tid":0,"kind":"indirect-call","src":"0x8048100","dst":"0x8050000","len":2}

#include <array>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/error.hpp"

namespace lockdown {

enum class EventKind {
    load,
    unload,
    direct_call,
    indirect_call,
    direct_jump,
    indirect_jump,
    ret,
    plt_call,
    exception_unwind,
    code_write,
};

inline constexpr std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::load: return "load";
    case EventKind::unload: return "unload";
    case EventKind::direct_call: return "direct-call";
    case EventKind::indirect_call: return "indirect-call";
    case EventKind::direct_jump: return "direct-jump";
    case EventKind::indirect_jump: return "indirect-jump";
    case EventKind::ret: return "return";
    case EventKind::plt_call: return "plt-call";
    case EventKind::exception_unwind: return "exception-unwind";
    case EventKind::code_write: return "code-write";
    }
    return "unknown";
}

inline constexpr std::array<EventKind, 10> all_event_kinds{
    EventKind::load,          EventKind::unload,        EventKind::direct_call, EventKind::indirect_call,
    EventKind::direct_jump,   EventKind::indirect_jump, EventKind::ret,         EventKind::plt_call,
    EventKind::exception_unwind, EventKind::code_write};

inline std::optional<EventKind> event_kind_from(std::string_view name) {
    for (EventKind k : all_event_kinds) {
        if (to_string(k) == name) {
            return k;
        }
    }
    return std::nullopt;
}

inline bool is_call(EventKind k) {
    return k == EventKind::direct_call || k == EventKind::indirect_call || k == EventKind::plt_call;
}
inline bool is_transfer(EventKind k) {
    return is_call(k) || k == EventKind::direct_jump || k == EventKind::indirect_jump || k == EventKind::ret;
}

struct TraceEvent {
    std::uint64_t seq = 0;
    std::uint32_t tid = 0;
    EventKind kind = EventKind::load;
    std::string path;         // load, unload
    Address base = 0;         // load
    Address src = 0;          // transfers
    Address dst = 0;          // transfers; claimed return address for returns
    std::uint32_t length = 0; // call instruction length
    Address target = 0;       // exception-unwind: return address to resynchronise to; code-write: written address

    bool operator==(const TraceEvent&) const = default;
};

namespace detail {

inline Address json_address(const nlohmann::json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw std::invalid_argument(std::string("missing field '") + field + "'");
    }
    if (!it->is_string()) {
        throw std::invalid_argument(std::string("field '") + field + "' must be a hex string");
    }
    return parse_hex_address(it->get<std::string>());
}

template <class T>
T json_unsigned(const nlohmann::json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw std::invalid_argument(std::string("missing field '") + field + "'");
    }
    if (!it->is_number_unsigned()) {
        throw std::invalid_argument(std::string("field '") + field + "' must be a non-negative integer");
    }
    const auto v = it->get<std::uint64_t>();
    if (v > std::numeric_limits<T>::max()) {
        throw std::invalid_argument(std::string("field '") + field + "' is out of range");
    }
    return static_cast<T>(v);
}

} // namespace detail

/// Decodes one trace record (no sequencing checks).
inline TraceEvent parse_event(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw std::invalid_argument("record is not a JSON object");
    }
    TraceEvent e;
    e.seq = detail::json_unsigned<std::uint64_t>(j, "seq");
    e.tid = detail::json_unsigned<std::uint32_t>(j, "tid");
    auto kind = j.find("kind");
    if (kind == j.end() || !kind->is_string()) {
        throw std::invalid_argument("missing string field 'kind'");
    }
    auto k = event_kind_from(kind->get<std::string>());
    if (!k) {
        throw std::invalid_argument("unknown kind '" + kind->get<std::string>() + "'");
    }
    e.kind = *k;
    auto path = [&] {
        auto p = j.find("path");
        if (p == j.end() || !p->is_string() || p->get<std::string>().empty()) {
            throw std::invalid_argument("missing string field 'path'");
        }
        return p->get<std::string>();
    };
    switch (e.kind) {
    case EventKind::load:
        e.path = path();
        e.base = detail::json_address(j, "base");
        break;
    case EventKind::unload:
        e.path = path();
        break;
    case EventKind::direct_call:
    case EventKind::indirect_call:
    case EventKind::plt_call:
        e.src = detail::json_address(j, "src");
        e.dst = detail::json_address(j, "dst");
        e.length = detail::json_unsigned<std::uint32_t>(j, "len");
        if (e.length == 0 || e.length > 15) {
            throw std::invalid_argument("call instruction length must be 1..15");
        }
        break;
    case EventKind::direct_jump:
    case EventKind::indirect_jump:
    case EventKind::ret:
        e.src = detail::json_address(j, "src");
        e.dst = detail::json_address(j, "dst");
        break;
    case EventKind::exception_unwind:
        e.target = detail::json_address(j, "target");
        break;
    case EventKind::code_write:
        e.target = detail::json_address(j, "addr");
        break;
    }
    return e;
}

/// Parses a whole trace. Blank lines are skipped; any other line either
/// yields an event or a malformed-trace error naming the line.
inline std::vector<TraceEvent> parse_trace(std::istream& in) {
    std::vector<TraceEvent> events;
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t last_seq = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        TraceEvent e;
        try {
            e = parse_event(nlohmann::json::parse(line));
        } catch (const std::exception& ex) {
            throw Error(ErrorKind::malformed_trace, "line " + std::to_string(line_no) + ": " + ex.what());
        }
        if (e.seq == 0 || e.seq <= last_seq) {
            throw Error(ErrorKind::malformed_trace, "line " + std::to_string(line_no) + ": sequence number " +
                                                        std::to_string(e.seq) + " does not increase (previous " +
                                                        std::to_string(last_seq) + ")");
        }
        last_seq = e.seq;
        events.push_back(std::move(e));
    }
    return events;
}

inline nlohmann::ordered_json event_to_json(const TraceEvent& e) {
    nlohmann::ordered_json j;
    j["seq"] = e.seq;
    j["tid"] = e.tid;
    j["kind"] = std::string(to_string(e.kind));
    switch (e.kind) {
    case EventKind::load:
        j["path"] = e.path;
        j["base"] = hex(e.base);
        break;
    case EventKind::unload:
        j["path"] = e.path;
        break;
    case EventKind::direct_call:
    case EventKind::indirect_call:
    case EventKind::plt_call:
        j["src"] = hex(e.src);
        j["dst"] = hex(e.dst);
        j["len"] = e.length;
        break;
    case EventKind::direct_jump:
    case EventKind::indirect_jump:
    case EventKind::ret:
        j["src"] = hex(e.src);
        j["dst"] = hex(e.dst);
        break;
    case EventKind::exception_unwind:
        j["target"] = hex(e.target);
        break;
    case EventKind::code_write:
        j["addr"] = hex(e.target);
        break;
    }
    return j;
}

inline std::string format_trace(const std::vector<TraceEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += event_to_json(e).dump();
        out += '\n';
    }
    return out;
}

} // namespace lockdown
