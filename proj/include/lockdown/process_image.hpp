// Copyright (c) Lockdown-replay contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lockdown/callback_scan.hpp"
#include "lockdown/elf/instruction_map.hpp"
#include "lockdown/elf/module_image.hpp"
#include "lockdown/error.hpp"
#include "lockdown/loaded_module.hpp"

namespace lockdown {

/// Why a source scope may transfer to a target. Stored as a bit set per
/// (target, source) so that overlapping grants survive partial revocation.
enum class Provenance : std::uint8_t {
    export_import = 1,
    local_symbol = 2,
    callback_heuristic = 4,
    plt_resolved = 8,
    section_granule = 16,
};

inline constexpr std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::export_import: return "export-import";
    case Provenance::local_symbol: return "local-symbol";
    case Provenance::callback_heuristic: return "callback-heuristic";
    case Provenance::plt_resolved: return "plt-resolved";
    case Provenance::section_granule: return "section-granule";
    }
    return "unknown";
}

inline bool has(std::uint8_t mask, Provenance p) { return (mask & static_cast<std::uint8_t>(p)) != 0; }

struct CallTarget {
    std::map<ModuleId, std::uint8_t> sources; // provenance mask per allowed source module
    bool callback = false;                    // admitted for every module

    bool operator==(const CallTarget&) const = default;
};

/// Control transfer lookup table: absolute target -> allowed source scopes.
struct TransferLookupTable {
    std::map<Address, CallTarget> call_targets;
    std::map<std::pair<ModuleId, std::string>, ModuleId> resolved_imports;
    std::map<std::pair<ModuleId, Address>, Address> plt_bindings; // (owner, PLT slot) -> bound target
    std::set<ModuleId> section_granule_modules;                    // stripped: own code callable at section granularity

    bool operator==(const TransferLookupTable&) const = default;

    [[nodiscard]] const CallTarget* find(Address target) const {
        auto it = call_targets.find(target);
        return it == call_targets.end() ? nullptr : &it->second;
    }

    void grant(Address target, ModuleId source, Provenance p) {
        call_targets[target].sources[source] |= static_cast<std::uint8_t>(p);
    }
};

namespace detail {

inline const LoadedModule* first_exporter(std::span<const LoadedModule> loaded, std::string_view name) {
    for (const auto& m : loaded) {
        if (m.image->exports_symbol(name)) {
            return &m;
        }
    }
    return nullptr;
}

/// Absolute address of an exported function, if it is a valid call target.
inline std::optional<Address> exported_function(const LoadedModule& m, std::string_view name) {
    const SymbolRecord* def = m.image->exported_definition(name);
    if (def == nullptr || def->kind != SymbolKind::function) {
        return std::nullopt;
    }
    const Address abs = m.base + def->value;
    if (!m.is_valid_instruction(abs)) {
        return std::nullopt;
    }
    return abs;
}

inline void grant_locals(TransferLookupTable& t, const LoadedModule& m) {
    if (m.image->stripped) {
        t.section_granule_modules.insert(m.id);
        return;
    }
    for (const auto& s : m.image->symbols) {
        if (s.kind == SymbolKind::function && m.is_valid_instruction(m.base + s.value)) {
            t.grant(m.base + s.value, m.id, Provenance::local_symbol);
        }
    }
}

inline void grant_import(TransferLookupTable& t, const LoadedModule& importer, const std::string& name,
                         const LoadedModule& exporter) {
    t.resolved_imports[{importer.id, name}] = exporter.id;
    if (auto target = exported_function(exporter, name)) {
        t.grant(*target, importer.id, Provenance::export_import);
    }
}

inline void bind_plt(TransferLookupTable& t, const LoadedModule& importer, std::span<const LoadedModule> loaded) {
    for (const auto& entry : importer.image->plt) {
        const Address slot = importer.base + entry.address;
        t.plt_bindings.erase({importer.id, slot});
        auto it = t.resolved_imports.find({importer.id, entry.symbol});
        if (it == t.resolved_imports.end()) {
            continue;
        }
        for (const auto& m : loaded) {
            if (m.id == it->second) {
                if (auto target = exported_function(m, entry.symbol)) {
                    t.plt_bindings[{importer.id, slot}] = *target;
                }
            }
        }
    }
}

} // namespace detail

/// Callback findings of `source` whose targets pass `admit_in`.
inline std::vector<CallbackFinding> scan_against(const LoadedModule& source, std::span<const LoadedModule> targets) {
    return scan_module_callbacks(source, [&](Address value) {
        return std::any_of(targets.begin(), targets.end(), [&](const LoadedModule& m) { return m.is_valid_instruction(value); });
    });
}

/// Every callback finding over a loaded set, each module scanned against all.
inline std::set<CallbackFinding> scan_all_callbacks(std::span<const LoadedModule> loaded) {
    std::set<CallbackFinding> out;
    for (const auto& m : loaded) {
        for (const auto& f : scan_against(m, loaded)) {
            out.insert(f);
        }
    }
    return out;
}

/// From-scratch table construction over a loaded set (in load order) and a
/// callback set. The incremental path in ProcessImage must agree with it.
inline TransferLookupTable build_table(std::span<const LoadedModule> loaded, const std::set<CallbackFinding>& callbacks) {
    TransferLookupTable t;
    for (const auto& m : loaded) {
        detail::grant_locals(t, m);
    }
    for (const auto& importer : loaded) {
        for (const auto& name : importer.image->imports) {
            if (const LoadedModule* e = detail::first_exporter(loaded, name)) {
                detail::grant_import(t, importer, name, *e);
            }
        }
    }
    for (const auto& importer : loaded) {
        detail::bind_plt(t, importer, loaded);
    }
    for (const auto& f : callbacks) {
        t.call_targets[f.address].callback = true;
    }
    return t;
}

/// The dynamic view of a process: loaded modules in load order, the lookup
/// table derived from them and the admitted callback set. Mutations are
/// single-writer; copies are cheap snapshots (module images are shared).
class ProcessImage {
  public:
    /// Loads a module at `base`. Imports that no loaded module exports stay
    /// unresolved (lazy binding) and are listed by unresolved_imports().
    ModuleId load_module(std::shared_ptr<const ModuleImage> image, Address base, std::shared_ptr<const InstructionMap> imap) {
        if (base % page_size != 0) {
            throw Error(ErrorKind::misaligned_base, image->path + " at " + hex(base) + " is not page aligned");
        }
        if (find_by_path(image->path) != nullptr) {
            throw Error(ErrorKind::duplicate_module, image->path + " is already loaded");
        }
        const ModuleId id{next_id_++};
        LoadedModule lm = make_loaded_module(id, std::move(image), base, std::move(imap));
        for (const auto& other : loaded_) {
            if (lm.span.start < other.span.end && other.span.start < lm.span.end) {
                throw Error(ErrorKind::overlapping_base,
                            lm.path() + " at " + hex(base) + " overlaps " + other.path() + " at " + hex(other.base));
            }
        }
        loaded_.push_back(std::move(lm));
        const LoadedModule& m = loaded_.back();

        detail::grant_locals(table_, m);
        for (const auto& importer : loaded_) {
            bool changed = false;
            for (const auto& name : importer.image->imports) {
                if (table_.resolved_imports.count({importer.id, name}) != 0) {
                    continue; // first-loaded exporter keeps the binding
                }
                if (const LoadedModule* e = detail::first_exporter(loaded_, name)) {
                    detail::grant_import(table_, importer, name, *e);
                    changed = true;
                }
            }
            if (changed || importer.id == id) {
                detail::bind_plt(table_, importer, loaded_);
            }
        }

        // New module against everything, everything else against the new module.
        const std::span<const LoadedModule> only_new(&loaded_.back(), 1);
        for (const auto& f : scan_against(m, loaded_)) {
            add_finding(f);
        }
        for (const auto& other : loaded_) {
            if (other.id != id) {
                for (const auto& f : scan_against(other, only_new)) {
                    add_finding(f);
                }
            }
        }
        bump();
        return id;
    }

    ModuleId load_module(ModuleImage image, Address base, InstructionMap imap) {
        return load_module(std::make_shared<const ModuleImage>(std::move(image)), base,
                           std::make_shared<const InstructionMap>(std::move(imap)));
    }

    /// Revokes every binding into or out of a module.
    void unload_module(ModuleId id) {
        auto it = std::find_if(loaded_.begin(), loaded_.end(), [&](const LoadedModule& m) { return m.id == id; });
        if (it == loaded_.end()) {
            throw Error(ErrorKind::unknown_module, "module #" + std::to_string(id.value) + " is not loaded");
        }
        const Interval gone = it->span;
        loaded_.erase(it);

        for (auto e = table_.call_targets.begin(); e != table_.call_targets.end();) {
            if (gone.contains(e->first)) {
                e = table_.call_targets.erase(e);
                continue;
            }
            e->second.sources.erase(id);
            e = e->second.sources.empty() && !e->second.callback ? table_.call_targets.erase(e) : std::next(e);
        }
        table_.section_granule_modules.erase(id);

        std::vector<std::pair<ModuleId, std::string>> orphaned;
        for (auto r = table_.resolved_imports.begin(); r != table_.resolved_imports.end();) {
            if (r->first.first == id) {
                r = table_.resolved_imports.erase(r);
            } else if (r->second == id) {
                orphaned.push_back(r->first);
                r = table_.resolved_imports.erase(r);
            } else {
                ++r;
            }
        }
        std::erase_if(table_.plt_bindings, [&](const auto& b) { return b.first.first == id; });
        std::set<ModuleId> rebind;
        for (const auto& [importer_id, name] : orphaned) {
            const LoadedModule* importer = find(importer_id);
            if (const LoadedModule* e = detail::first_exporter(loaded_, name)) {
                detail::grant_import(table_, *importer, name, *e);
            }
            rebind.insert(importer_id);
        }
        for (ModuleId m : rebind) {
            detail::bind_plt(table_, *find(m), loaded_);
        }

        std::set<Address> touched;
        for (auto f = callbacks_.begin(); f != callbacks_.end();) {
            if (f->source == id || gone.contains(f->address)) {
                touched.insert(f->address);
                f = callbacks_.erase(f);
            } else {
                ++f;
            }
        }
        for (Address a : touched) {
            refresh_callback_flag(a);
        }
        bump();
    }

    /// Target of a PLT slot owned by `source`; the table already holds the
    /// binding once the import is resolved.
    [[nodiscard]] Address resolve_plt(ModuleId source, Address plt_address) const {
        const LoadedModule* m = find(source);
        if (m == nullptr) {
            throw Error(ErrorKind::unknown_module, "module #" + std::to_string(source.value) + " is not loaded");
        }
        if (auto it = table_.plt_bindings.find({source, plt_address}); it != table_.plt_bindings.end()) {
            return it->second;
        }
        for (const auto& entry : m->image->plt) {
            if (m->base + entry.address == plt_address) {
                throw Error(ErrorKind::unresolved_symbol, "PLT slot " + hex(plt_address) + " of " + m->path() + " names '" +
                                                              entry.symbol + "' which no loaded module exports");
            }
        }
        throw Error(ErrorKind::unresolved_symbol, hex(plt_address) + " is not a PLT slot of " + m->path());
    }

    [[nodiscard]] std::optional<Address> plt_binding(ModuleId source, Address plt_address) const {
        auto it = table_.plt_bindings.find({source, plt_address});
        if (it == table_.plt_bindings.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] bool is_plt_slot(const LoadedModule& m, Address abs) const {
        return std::any_of(m.image->plt.begin(), m.image->plt.end(),
                           [&](const PltEntry& e) { return m.base + e.address == abs; });
    }

    [[nodiscard]] std::optional<Interval> function_extent(Address addr) const {
        const LoadedModule* m = module_at(addr);
        if (m == nullptr) {
            return std::nullopt;
        }
        return m->function_extent(addr);
    }

    [[nodiscard]] const LoadedModule* module_at(Address addr) const {
        for (const auto& m : loaded_) {
            if (m.contains(addr)) {
                return &m;
            }
        }
        return nullptr;
    }

    [[nodiscard]] const LoadedModule* find(ModuleId id) const {
        for (const auto& m : loaded_) {
            if (m.id == id) {
                return &m;
            }
        }
        return nullptr;
    }

    [[nodiscard]] const LoadedModule* find_by_path(std::string_view path) const {
        for (const auto& m : loaded_) {
            if (m.path() == path) {
                return &m;
            }
        }
        return nullptr;
    }

    [[nodiscard]] bool is_valid_instruction(Address addr) const {
        const LoadedModule* m = module_at(addr);
        return m != nullptr && m->is_valid_instruction(addr);
    }

    [[nodiscard]] std::vector<std::pair<ModuleId, std::string>> unresolved_imports() const {
        std::vector<std::pair<ModuleId, std::string>> out;
        for (const auto& m : loaded_) {
            for (const auto& name : m.image->imports) {
                if (table_.resolved_imports.count({m.id, name}) == 0) {
                    out.emplace_back(m.id, name);
                }
            }
        }
        return out;
    }

    /// Fresh callback scan of one loaded module against the current set.
    [[nodiscard]] std::vector<CallbackFinding> scan_callbacks(ModuleId id) const {
        const LoadedModule* m = find(id);
        if (m == nullptr) {
            throw Error(ErrorKind::unknown_module, "module #" + std::to_string(id.value) + " is not loaded");
        }
        return scan_against(*m, loaded_);
    }

    [[nodiscard]] std::span<const LoadedModule> modules() const { return loaded_; }
    [[nodiscard]] const TransferLookupTable& table() const { return table_; }
    [[nodiscard]] const std::set<CallbackFinding>& callbacks() const { return callbacks_; }
    [[nodiscard]] std::uint64_t epoch() const { return epoch_; }

    /// Process-wide unique stamp of this exact state; copies share it,
    /// diverging mutations never do. Used to key derived caches.
    [[nodiscard]] std::uint64_t revision() const { return revision_; }

  private:
    void add_finding(const CallbackFinding& f) {
        callbacks_.insert(f);
        table_.call_targets[f.address].callback = true;
    }

    void refresh_callback_flag(Address a) {
        const bool still = std::any_of(callbacks_.begin(), callbacks_.end(), [&](const CallbackFinding& f) { return f.address == a; });
        auto it = table_.call_targets.find(a);
        if (it == table_.call_targets.end()) {
            return;
        }
        it->second.callback = still;
        if (!still && it->second.sources.empty()) {
            table_.call_targets.erase(it);
        }
    }

    void bump() {
        ++epoch_;
        revision_ = next_revision();
    }

    static std::uint64_t next_revision() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    std::vector<LoadedModule> loaded_;
    TransferLookupTable table_;
    std::set<CallbackFinding> callbacks_;
    std::uint64_t epoch_ = 0;
    std::uint64_t revision_ = next_revision();
    std::uint32_t next_id_ = 1;
};

} // namespace lockdown
