// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
//
// lockdown: inspect ELF modules, replay control-flow traces under the CFI
// policy, report DAIR, and produce fixtures and adversarial traces.
//
// Exit status: 0 clean, 1 policy violations, 2 bad input or any other error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lockdown/lockdown.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int exit_clean = 0;
constexpr int exit_violations = 1;
constexpr int exit_error = 2;

void setup_logging() {
    auto logger = spdlog::stderr_color_st("lockdown");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("%^%l%$: %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("LOCKDOWN_LOG")) {
        spdlog::set_level(spdlog::level::from_str(level));
    }
}

std::vector<lockdown::TraceEvent> load_trace(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw lockdown::Error(lockdown::ErrorKind::io_error, "cannot open trace " + path.string());
    }
    auto events = lockdown::parse_trace(in);
    spdlog::info("{}: {} events", path.string(), events.size());
    return events;
}

std::map<std::string, lockdown::BoundarySidecar> load_sidecar(const std::string& path) {
    if (path.empty()) {
        return {};
    }
    std::ifstream in(path);
    if (!in) {
        throw lockdown::Error(lockdown::ErrorKind::io_error, "cannot open sidecar " + path);
    }
    return lockdown::parse_sidecar(in);
}

lockdown::PolicyConfig load_policy(const std::string& allowlist) {
    lockdown::PolicyConfig config;
    if (!allowlist.empty()) {
        std::ifstream in(allowlist);
        if (!in) {
            throw lockdown::Error(lockdown::ErrorKind::io_error, "cannot open allowlist " + allowlist);
        }
        config.allowlist = lockdown::parse_allowlist(in);
    }
    return config;
}

lockdown::UniverseMode universe_from(const std::string& name) {
    return name == "valid-instructions" ? lockdown::UniverseMode::valid_instructions : lockdown::UniverseMode::exec_bytes;
}

void emit(const std::string& output, const ordered_json& doc) {
    const std::string text = doc.dump(2) + "\n";
    if (output.empty() || output == "-") {
        std::cout << text;
    } else {
        lockdown::write_file(output, text);
        spdlog::info("wrote {}", output);
    }
}

fs::path trace_root(const std::string& trace) {
    auto parent = fs::path(trace).parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

// Options shared by check, dair and mutate.
struct ReplayOptions {
    std::string trace;
    std::string modules;
    std::string sidecar;
    std::string allowlist;
    std::string universe = "exec-bytes";
    std::string output;
    bool elf64 = false;
    bool abort = false;
    bool no_cache = false;
};

void add_replay_options(CLI::App* cmd, ReplayOptions& o) {
    cmd->add_option("--trace", o.trace, "Trace file (JSON lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--modules", o.modules, "Directory module paths are resolved against (default: the trace's)")
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--sidecar", o.sidecar, "Instruction-boundary file")->check(CLI::ExistingFile);
    cmd->add_option("--allowlist", o.allowlist, "Extra permitted (module, symbol) pairs")->check(CLI::ExistingFile);
    cmd->add_flag("--elf64", o.elf64, "Accept 64-bit ELF modules");
}

lockdown::ReplayConfig replay_config(const ReplayOptions& o) {
    lockdown::ReplayConfig config;
    config.abort_on_violation = o.abort;
    config.universe_mode = universe_from(o.universe);
    config.policy = load_policy(o.allowlist);
    config.use_cache = !o.no_cache;
    return config;
}

lockdown::ModuleProvider provider_for(const ReplayOptions& o) {
    const fs::path root = o.modules.empty() ? trace_root(o.trace) : fs::path(o.modules);
    return lockdown::directory_provider(root, load_sidecar(o.sidecar), lockdown::ParseOptions{o.elf64});
}

ordered_json module_inventory(const lockdown::ModuleImage& m) {
    ordered_json j;
    j["path"] = m.path;
    j["class"] = m.elf_class == 64 ? "ELF64" : "ELF32";
    j["stripped"] = m.stripped;
    std::size_t dynsym = 0;
    std::size_t symtab = 0;
    ordered_json locals = ordered_json::array();
    for (const auto& s : m.symbols) {
        (s.origin == lockdown::SymbolOrigin::dynsym ? dynsym : symtab)++;
        if (s.origin == lockdown::SymbolOrigin::symtab && s.visibility == lockdown::SymbolVisibility::hidden &&
            s.kind == lockdown::SymbolKind::function) {
            locals.push_back({{"name", s.name}, {"value", lockdown::hex(s.value)}, {"size", s.size}});
        }
    }
    j["symbols"] = {{"dynsym", dynsym}, {"symtab", symtab}};
    j["exports"] = m.exports;
    j["imports"] = m.imports;
    j["local_functions"] = std::move(locals);
    ordered_json plt = ordered_json::array();
    for (const auto& p : m.plt) {
        plt.push_back({{"address", lockdown::hex(p.address)}, {"symbol", p.symbol}});
    }
    j["plt"] = std::move(plt);
    ordered_json sections = ordered_json::array();
    for (const auto& s : m.sections) {
        if (s.alloc) {
            sections.push_back({{"name", s.name},
                                {"address", lockdown::hex(s.virtual_offset)},
                                {"size", s.size},
                                {"exec", s.exec},
                                {"write", s.write}});
        }
    }
    j["sections"] = std::move(sections);
    j["relocations"] = m.relocations.size();
    j["executable_bytes"] = m.executable_bytes();
    return j;
}

int cmd_analyze(const std::vector<std::string>& paths, bool elf64, const std::string& output) {
    ordered_json modules = ordered_json::array();
    for (const auto& p : paths) {
        auto image = lockdown::parse_module(lockdown::read_file(p), p, lockdown::ParseOptions{elf64});
        modules.push_back(module_inventory(image));
    }
    emit(output, ordered_json{{"modules", std::move(modules)}});
    return exit_clean;
}

int cmd_check(const ReplayOptions& o) {
    auto trace = load_trace(o.trace);
    auto report = lockdown::replay(trace, provider_for(o), replay_config(o));
    for (const auto& v : report.violations) {
        spdlog::warn("seq {}: {} denied by {}: {}", v.seq, lockdown::to_string(v.kind), lockdown::to_string(v.rule), v.detail);
    }
    emit(o.output, lockdown::report_to_json(report));
    return report.violations.empty() ? exit_clean : exit_violations;
}

int cmd_dair(const ReplayOptions& o, const std::string& csv, bool stripped_twin) {
    auto trace = load_trace(o.trace);
    auto provider = provider_for(o);
    const auto config = replay_config(o);
    auto report = lockdown::replay(trace, provider, config);

    ordered_json doc;
    doc["dair"] = lockdown::dair_to_json(report.dair);
    doc["universe"] = std::string(lockdown::to_string(config.universe_mode));
    doc["violations"] = report.violations.size();
    if (report.dair.n() == 0) {
        std::cerr << "no-transfers: the trace executes no indirect transfers\n";
    } else {
        std::cout << "DAIR " << lockdown::format_percent(*report.dair.total()) << " over " << report.dair.n()
                  << " indirect transfers\n";
    }
    if (!csv.empty()) {
        lockdown::write_file(csv, lockdown::series_csv(report.dair));
    }

    if (stripped_twin) {
        // Same trace, same instruction maps, symbol tables removed.
        lockdown::ModuleProvider twin = [provider](const std::string& path) {
            auto a = provider(path);
            a.image = std::make_shared<const lockdown::ModuleImage>(lockdown::strip_module(*a.image));
            return a;
        };
        auto stripped = lockdown::replay(trace, twin, config);
        doc["stripped_twin"] = lockdown::dair_to_json(stripped.dair);
        const auto full = report.dair.total();
        const auto bare = stripped.dair.total();
        std::string ordering = "undefined";
        if (full && bare) {
            ordering = *full > *bare ? "full > stripped" : *full == *bare ? "full = stripped" : "full < stripped";
            std::cout << "full " << lockdown::format_percent(*full) << ", stripped " << lockdown::format_percent(*bare)
                      << ": " << ordering << "\n";
        }
        doc["ordering"] = ordering;
    }
    emit(o.output, doc);
    return exit_clean;
}

int cmd_fixture(const std::string& spec_path, const std::string& out_dir) {
    std::ifstream in(spec_path);
    if (!in) {
        throw lockdown::Error(lockdown::ErrorKind::io_error, "cannot open fixture spec " + spec_path);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw lockdown::Error(lockdown::ErrorKind::inconsistent_spec, std::string("fixture spec: ") + e.what());
    }
    const auto fixtures = lockdown::fixtures_from_json(j);
    fs::create_directories(out_dir);
    std::string sidecar;
    for (const auto& f : fixtures) {
        const fs::path target = fs::path(out_dir) / f.path;
        if (target.has_parent_path()) {
            fs::create_directories(target.parent_path());
        }
        lockdown::write_file(target, lockdown::build_fixture(f.spec));
        sidecar += lockdown::format_sidecar(lockdown::fixture_sidecar(f));
        std::cout << target.string() << "\n";
    }
    lockdown::write_file(fs::path(out_dir) / "boundaries.sidecar", sidecar);
    return exit_clean;
}

int cmd_mutate(const ReplayOptions& o, const std::string& cls, std::size_t index) {
    auto mutation = lockdown::mutation_class_from(cls);
    if (!mutation) {
        throw lockdown::Error(lockdown::ErrorKind::mutation_out_of_range, "unknown mutation class '" + cls + "'");
    }
    auto trace = load_trace(o.trace);
    auto m = lockdown::generate_adversarial_trace(trace, {*mutation, index}, provider_for(o), load_policy(o.allowlist));
    std::cerr << "seq " << m.seq << ": " << lockdown::hex(m.original) << " -> " << lockdown::hex(m.replacement)
              << ", expect " << lockdown::to_string(m.expected_decision) << " " << lockdown::to_string(m.expected_rule)
              << "\n";
    const std::string text = lockdown::format_trace(m.trace);
    if (o.output.empty() || o.output == "-") {
        std::cout << text;
    } else {
        lockdown::write_file(o.output, text);
    }
    return exit_clean;
}

int run(int argc, char** argv) {
    CLI::App app{"Replay control-flow traces under the Lockdown CFI policy"};
    app.require_subcommand(1);

    std::vector<std::string> analyze_paths;
    bool analyze_elf64 = false;
    std::string analyze_output;
    auto* analyze = app.add_subcommand("analyze", "Print the symbol inventory of ELF modules");
    analyze->add_option("paths", analyze_paths, "Module files")->required();
    analyze->add_flag("--elf64", analyze_elf64, "Accept 64-bit ELF modules");
    analyze->add_option("-o,--output", analyze_output, "Write JSON here instead of stdout");

    ReplayOptions check_opts;
    auto* check = app.add_subcommand("check", "Replay a trace and report policy violations");
    add_replay_options(check, check_opts);
    check->add_flag("--abort", check_opts.abort, "Stop at the first violation");
    check->add_flag("--no-cache", check_opts.no_cache, "Disable the fast-path cache");
    check->add_option("--universe", check_opts.universe, "DAIR universe")
        ->check(CLI::IsMember({"exec-bytes", "valid-instructions"}));
    check->add_option("-o,--output", check_opts.output, "Report file");

    ReplayOptions dair_opts;
    std::string csv;
    bool stripped_twin = false;
    auto* dair = app.add_subcommand("dair", "Compute DAIR over a trace");
    add_replay_options(dair, dair_opts);
    dair->add_option("--universe", dair_opts.universe, "DAIR universe")
        ->check(CLI::IsMember({"exec-bytes", "valid-instructions"}));
    dair->add_option("--csv", csv, "Write the DAIR series as CSV");
    dair->add_flag("--stripped-twin", stripped_twin, "Also replay against stripped copies of every module");
    dair->add_option("-o,--output", dair_opts.output, "Report file");

    std::string spec_path;
    std::string fixture_dir;
    auto* fixture = app.add_subcommand("fixture", "Build ELF fixtures from a JSON spec");
    fixture->add_option("--spec", spec_path, "Fixture spec (JSON)")->required()->check(CLI::ExistingFile);
    fixture->add_option("-o,--output", fixture_dir, "Output directory")->required();

    ReplayOptions mutate_opts;
    std::string mutation_class;
    std::size_t mutation_index = 0;
    auto* mutate = app.add_subcommand("mutate", "Redirect one transfer of a clean trace");
    add_replay_options(mutate, mutate_opts);
    mutate->add_option("--class", mutation_class, "ret, call, jump or a full mutation class name")->required();
    mutate->add_option("--index", mutation_index, "Which eligible event to mutate (0-based)");
    mutate->add_option("-o,--output", mutate_opts.output, "Mutated trace file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_error;
    }

    if (analyze->parsed()) {
        return cmd_analyze(analyze_paths, analyze_elf64, analyze_output);
    }
    if (check->parsed()) {
        return cmd_check(check_opts);
    }
    if (dair->parsed()) {
        return cmd_dair(dair_opts, csv, stripped_twin);
    }
    if (fixture->parsed()) {
        return cmd_fixture(spec_path, fixture_dir);
    }
    return cmd_mutate(mutate_opts, mutation_class, mutation_index);
}

} // namespace

int main(int argc, char** argv) {
    setup_logging();
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (...) {
        std::cerr << "error: unknown failure\n";
    }
    return exit_error;
}
