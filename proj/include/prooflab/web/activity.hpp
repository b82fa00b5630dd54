#pragma once

#include "prooflab/analytics/measures.hpp"
#include "prooflab/lint/linter.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>

namespace prooflab::web {

struct RuleEntry {
    std::string name;
    std::string statement;
};

struct RuleGroup {
    std::string group;
    std::vector<RuleEntry> entries;
};

struct KeyboardKey {
    std::string glyph;
    /// Text placed at the cursor, e.g. the prover's `\<and>` escape.
    std::string insert;
};

struct ActivityConfig {
    ActivityId id;
    std::string title;
    std::vector<analytics::ExerciseSpec> exercises;
    lint::LinterConfig linter;
    std::vector<RuleGroup> rule_reference;
    std::vector<KeyboardKey> symbol_keyboard;
    std::optional<std::string> pdf;
    bool linter_toggle_allowed = true;
};

/// `linter_toggle_allowed` is authoritative over `linter.toggle_allowed`.
void from_json(const json& j, ActivityConfig& a);
void to_json(json& j, const ActivityConfig& a);

/// Throws Error(invalid_argument) on duplicate rule names within a group,
/// empty insertion texts or a bad id; Error(invalid_pattern) when a lint or
/// exercise pattern does not compile.
void validate(const ActivityConfig& a);

/// Activity configurations read from <dir>/*.json at startup and replaced
/// through the instructor endpoint (which writes the file back).
class ActivityRegistry {
public:
    /// Loads every *.json file; a broken file fails startup with its name.
    explicit ActivityRegistry(std::filesystem::path dir);

    std::vector<ActivityConfig> list() const;
    std::optional<ActivityConfig> find(const ActivityId& id) const;
    std::shared_ptr<const lint::Ruleset> ruleset(const ActivityId& id) const;

    /// Validates, persists and installs; returns true when it replaced one.
    bool put(const ActivityConfig& config);

    static ActivityConfig load_file(const std::filesystem::path& file);

private:
    struct Entry {
        ActivityConfig config;
        std::shared_ptr<const lint::Ruleset> ruleset;
    };

    static Entry compile(const ActivityConfig& config);

    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    std::map<ActivityId, Entry> entries_;
};

}  // namespace prooflab::web
