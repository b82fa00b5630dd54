#include "prooflab/web/activity.hpp"

#include "prooflab/workspace/workspace.hpp"

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace prooflab::web {

void from_json(const json& j, ActivityConfig& a) {
    a.id = ActivityId(j.at("id").get<std::string>());
    a.title = j.value("title", a.id.str());
    a.exercises = j.value("exercises", std::vector<analytics::ExerciseSpec>{});
    a.linter = j.value("linter", lint::LinterConfig{});
    a.rule_reference.clear();
    for (const auto& g : j.value("rule_reference", json::array())) {
        RuleGroup group{g.at("group").get<std::string>(), {}};
        for (const auto& e : g.value("entries", json::array())) {
            group.entries.push_back({e.at("name").get<std::string>(), e.value("statement", std::string())});
        }
        a.rule_reference.push_back(std::move(group));
    }
    a.symbol_keyboard.clear();
    for (const auto& k : j.value("symbol_keyboard", json::array())) {
        a.symbol_keyboard.push_back({k.at("glyph").get<std::string>(), k.at("insert").get<std::string>()});
    }
    if (auto it = j.find("pdf"); it != j.end() && !it->is_null()) {
        a.pdf = it->get<std::string>();
    } else {
        a.pdf.reset();
    }
    a.linter_toggle_allowed = j.value("linter_toggle_allowed", a.linter.student_toggleable);
    a.linter.student_toggleable = a.linter_toggle_allowed;
}

void to_json(json& j, const ActivityConfig& a) {
    json groups = json::array();
    for (const auto& g : a.rule_reference) {
        json entries = json::array();
        for (const auto& e : g.entries) entries.push_back({{"name", e.name}, {"statement", e.statement}});
        groups.push_back({{"group", g.group}, {"entries", entries}});
    }
    json keys = json::array();
    for (const auto& k : a.symbol_keyboard) keys.push_back({{"glyph", k.glyph}, {"insert", k.insert}});
    j = json{{"id", a.id},
             {"title", a.title},
             {"exercises", a.exercises},
             {"linter", a.linter},
             {"rule_reference", groups},
             {"symbol_keyboard", keys},
             {"pdf", a.pdf ? json(*a.pdf) : json(nullptr)},
             {"linter_toggle_allowed", a.linter_toggle_allowed}};
}

void validate(const ActivityConfig& a) {
    if (!workspace::valid_identifier(a.id.str())) {
        throw Error(ErrorCode::invalid_argument, "invalid activity id '" + a.id.str() + "'");
    }
    for (const auto& g : a.rule_reference) {
        std::set<std::string> names;
        for (const auto& e : g.entries) {
            if (e.name.empty()) throw Error(ErrorCode::invalid_argument, "empty rule name in group '" + g.group + "'");
            if (!names.insert(e.name).second) {
                throw Error(ErrorCode::invalid_argument, "rule '" + e.name + "' listed twice in group '" + g.group + "'");
            }
        }
    }
    for (const auto& k : a.symbol_keyboard) {
        if (k.insert.empty()) throw Error(ErrorCode::invalid_argument, "empty insertion text for key '" + k.glyph + "'");
    }
    for (const auto& ex : a.exercises) {
        try {
            std::regex re(ex.pattern);
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::invalid_pattern, "exercise pattern '" + ex.pattern + "': " + e.what());
        }
    }
    (void)lint::compile_ruleset(a.linter);
}

ActivityRegistry::Entry ActivityRegistry::compile(const ActivityConfig& config) {
    validate(config);
    auto rs = std::make_shared<lint::Ruleset>(lint::compile_ruleset(config.linter));
    return Entry{config, std::move(rs)};
}

ActivityConfig ActivityRegistry::load_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::io_error, "cannot read " + file.string());
    try {
        return json::parse(in).get<ActivityConfig>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, file.string() + ": " + e.what());
    }
}

ActivityRegistry::ActivityRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (dir_.empty() || !std::filesystem::is_directory(dir_)) return;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        if (entry.path().extension() != ".json") continue;
        try {
            auto compiled = compile(load_file(entry.path()));
            const ActivityId id = compiled.config.id;
            entries_.insert_or_assign(id, std::move(compiled));
        } catch (const Error& e) {
            throw Error(e.code(), entry.path().string() + ": " + e.what());
        }
    }
}

std::vector<ActivityConfig> ActivityRegistry::list() const {
    std::shared_lock lock(mutex_);
    std::vector<ActivityConfig> out;
    for (const auto& [id, e] : entries_) out.push_back(e.config);
    return out;
}

std::optional<ActivityConfig> ActivityRegistry::find(const ActivityId& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second.config;
}

std::shared_ptr<const lint::Ruleset> ActivityRegistry::ruleset(const ActivityId& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : it->second.ruleset;
}

bool ActivityRegistry::put(const ActivityConfig& config) {
    auto compiled = compile(config);
    if (!dir_.empty()) {
        std::filesystem::create_directories(dir_);
        const auto file = dir_ / (config.id.str() + ".json");
        const auto tmp = dir_ / (config.id.str() + ".json.tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << json(config).dump(2) << '\n';
            if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, file);
    }
    std::unique_lock lock(mutex_);
    const bool replaced = entries_.contains(config.id);
    entries_.insert_or_assign(config.id, std::move(compiled));
    return replaced;
}

}  // namespace prooflab::web
