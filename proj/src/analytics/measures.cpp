#include "prooflab/analytics/measures.hpp"

#include "prooflab/isar/structure.hpp"
#include "prooflab/isar/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace prooflab::analytics {

namespace {

constexpr std::array kAllCategories = {MistakeCategory::syntactic, MistakeCategory::type_level,
                                       MistakeCategory::tactic_level, MistakeCategory::semantic,
                                       MistakeCategory::other};

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string normalize_ws(std::string_view s) {
    std::string out;
    bool space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string strip_quotation(std::string_view tok) {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') return std::string(tok.substr(1, tok.size() - 2));
    constexpr std::string_view open = "\xE2\x80\xB9", close = "\xE2\x80\xBA";
    if (tok.starts_with(open) && tok.ends_with(close) && tok.size() >= open.size() + close.size()) {
        return std::string(tok.substr(open.size(), tok.size() - open.size() - close.size()));
    }
    return std::string(tok);
}

std::vector<CheckEvent> sorted(std::span<const CheckEvent> events) {
    std::vector<CheckEvent> out(events.begin(), events.end());
    telemetry::sort_events(out);
    return out;
}

std::vector<CheckEvent> of_user(std::span<const CheckEvent> events, const UserId& user) {
    std::vector<CheckEvent> out;
    for (const auto& e : events) {
        if (e.user == user) out.push_back(e);
    }
    telemetry::sort_events(out);
    return out;
}

bool within_idle(std::chrono::milliseconds gap, std::chrono::milliseconds threshold) {
    return threshold.count() == 0 || gap <= threshold;
}

/// Index into `exercises` of the first spec whose pattern matches the name.
std::optional<std::size_t> exercise_index(const std::vector<std::regex>& patterns, const std::string& theory) {
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        if (std::regex_match(theory, patterns[i])) return i;
    }
    return std::nullopt;
}

std::vector<std::regex> compile_patterns(std::span<const ExerciseSpec> exercises) {
    std::vector<std::regex> out;
    for (const auto& ex : exercises) {
        try {
            out.emplace_back(ex.pattern);
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::invalid_pattern, "exercise pattern '" + ex.pattern + "': " + e.what());
        }
    }
    return out;
}

bool misses_expected_goal(const CheckEvent& e, const ExerciseSpec& spec) {
    if (spec.expected_statements.empty()) return false;
    const auto goals = stated_goals(e.theory_snapshot);
    for (const auto& expected : spec.expected_statements) {
        if (std::find(goals.begin(), goals.end(), normalize_ws(expected)) == goals.end()) return true;
    }
    return false;
}

}  // namespace

std::string_view to_string(MistakeCategory c) {
    switch (c) {
    case MistakeCategory::syntactic: return "syntactic";
    case MistakeCategory::type_level: return "type-level";
    case MistakeCategory::tactic_level: return "tactic-level";
    case MistakeCategory::semantic: return "semantic";
    case MistakeCategory::other: return "other";
    }
    return "other";
}

MistakeCategory parse_mistake_category(std::string_view text) {
    for (auto c : kAllCategories) {
        if (to_string(c) == text) return c;
    }
    throw Error(ErrorCode::invalid_argument, "unknown mistake category: " + std::string(text));
}

CategoryTable CategoryTable::defaults() {
    return CategoryTable{{
        {"Type unification failed", MistakeCategory::type_level},
        {"Type error", MistakeCategory::type_level},
        {"Failed to apply", MistakeCategory::tactic_level},
        {"Failed to finish proof", MistakeCategory::tactic_level},
        {"Undefined", MistakeCategory::syntactic},
        {"syntax error", MistakeCategory::syntactic},
        {"parse error", MistakeCategory::syntactic},
    }};
}

void from_json(const json& j, CategoryTable& t) {
    t.rules.clear();
    for (const auto& r : j.at("rules")) {
        t.rules.push_back({r.at("keyword").get<std::string>(), parse_mistake_category(r.at("category").get<std::string>())});
    }
}

void to_json(json& j, const CategoryTable& t) {
    j = json{{"rules", json::array()}};
    for (const auto& r : t.rules) j["rules"].push_back({{"keyword", r.keyword}, {"category", to_string(r.category)}});
}

MistakeCategory categorize(const Diagnostic& d, const CategoryTable& table) {
    if (d.source == DiagnosticSource::structure) return MistakeCategory::syntactic;
    if (d.source != DiagnosticSource::prover) return MistakeCategory::other;
    const std::string text = lowercase(d.message);
    for (const auto& rule : table.rules) {
        if (text.find(lowercase(rule.keyword)) != std::string::npos) return rule.category;
    }
    return MistakeCategory::other;
}

void from_json(const json& j, ExerciseSpec& e) {
    if (j.is_string()) {
        e.pattern = j.get<std::string>();
        e.expected_statements.clear();
        return;
    }
    e.pattern = j.at("pattern").get<std::string>();
    e.expected_statements = j.value("expected_statements", std::vector<std::string>{});
}

void to_json(json& j, const ExerciseSpec& e) {
    j = json{{"pattern", e.pattern}, {"expected_statements", e.expected_statements}};
}

std::string theory_name_of(std::string_view snapshot) { return isar::theory_header_name(snapshot); }

std::vector<std::string> stated_goals(std::string_view snapshot) {
    static const std::set<std::string, std::less<>> kGoalCommands = {"lemma", "theorem", "corollary", "proposition",
                                                                     "schematic_goal"};
    std::vector<std::string> goals;
    bool in_statement = false;
    for (const auto& tok : isar::tokenize(snapshot)) {
        if (tok.is_trivia()) continue;
        if (tok.cls == isar::TokenClass::command_keyword) {
            in_statement = kGoalCommands.contains(tok.text);
            continue;
        }
        if (in_statement && (tok.cls == isar::TokenClass::string_literal || tok.cls == isar::TokenClass::cartouche)) {
            goals.push_back(normalize_ws(strip_quotation(tok.text)));
        }
    }
    return goals;
}

std::vector<RankedGroup> rank_mistakes(std::span<const CheckEvent> events, GroupBy group_by,
                                       const CategoryTable& table, std::span<const ExerciseSpec> exercises) {
    const auto patterns = compile_patterns(exercises);
    std::map<std::string, std::map<MistakeCategory, std::size_t>> counts;
    for (const auto& e : events) {
        if (e.kind != telemetry::EventKind::result_received) continue;
        const std::string key = group_by == GroupBy::user       ? e.user.str()
                                : group_by == GroupBy::activity ? e.activity.str()
                                                                : std::string();
        auto& bucket = counts[key];
        for (const auto& d : e.diagnostics) ++bucket[categorize(d, table)];
        if (!patterns.empty()) {
            if (const auto idx = exercise_index(patterns, theory_name_of(e.theory_snapshot));
                idx && misses_expected_goal(e, exercises[*idx])) {
                ++bucket[MistakeCategory::semantic];
            }
        }
    }
    std::vector<RankedGroup> out;
    for (auto& [key, bucket] : counts) {
        RankedGroup g{key, {}};
        for (auto [cat, n] : bucket) {
            if (n > 0) g.counts.push_back({cat, n});
        }
        std::stable_sort(g.counts.begin(), g.counts.end(),
                         [](const CategoryCount& a, const CategoryCount& b) { return a.count > b.count; });
        if (!g.counts.empty()) out.push_back(std::move(g));
    }
    return out;
}

const AssociationRow* AssociationTable::find(MistakeCategory message, MistakeCategory mistake) const {
    for (const auto& r : rows) {
        if (r.message_category == message && r.mistake_category == mistake) return &r;
    }
    return nullptr;
}

AssociationTable message_mistake_association(std::span<const CheckEvent> events, const CategoryTable& table) {
    struct Step {
        std::set<MistakeCategory> messages;
        std::set<MistakeCategory> mistakes;
    };
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<Step>> chains;
    for (const auto& e : sorted(events)) {
        if (e.kind != telemetry::EventKind::result_received) continue;
        Step step;
        for (const auto& d : e.diagnostics) {
            const auto cat = categorize(d, table);
            step.messages.insert(cat);
            if (d.severity == Severity::error) step.mistakes.insert(cat);
        }
        chains[{e.user.str(), e.activity.str(), theory_name_of(e.theory_snapshot)}].push_back(std::move(step));
    }

    std::map<std::pair<MistakeCategory, MistakeCategory>, std::pair<std::size_t, std::size_t>> cells;
    for (const auto& [key, steps] : chains) {
        for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
            for (auto m : steps[i].messages) {
                for (auto k : steps[i].mistakes) {
                    auto& cell = cells[{m, k}];
                    ++cell.first;
                    if (!steps[i + 1].mistakes.contains(k)) ++cell.second;
                }
            }
        }
    }
    AssociationTable table_out;
    for (const auto& [key, cell] : cells) {
        table_out.rows.push_back({key.first, key.second, cell.first, cell.second,
                                  static_cast<double>(cell.second) / static_cast<double>(cell.first)});
    }
    return table_out;
}

CheckFrequency check_frequency(std::span<const CheckEvent> events, const UserId& user,
                               std::chrono::milliseconds idle_threshold) {
    const auto mine = of_user(events, user);
    CheckFrequency f;
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].kind == telemetry::EventKind::check_submitted) ++f.total_checks;
        if (i > 0) {
            const auto gap = mine[i].timestamp - mine[i - 1].timestamp;
            if (within_idle(gap, idle_threshold)) f.active_time += gap;
        }
    }
    if (f.total_checks > 0 && f.active_time.count() > 0) {
        f.checks_per_active_hour = static_cast<double>(f.total_checks) * 3'600'000.0 /
                                   static_cast<double>(f.active_time.count());
    }
    return f;
}

std::vector<ExerciseDuration> exercise_durations(std::span<const CheckEvent> events, const UserId& user,
                                                 std::span<const ExerciseSpec> exercises,
                                                 std::chrono::milliseconds idle_threshold) {
    const auto timeline = of_user(events, user);

    // Exercise order and first/last timeline index per exercise.
    std::vector<std::string> names;
    std::vector<std::optional<std::size_t>> first, last;
    const auto patterns = compile_patterns(exercises);
    if (!exercises.empty()) {
        for (const auto& ex : exercises) names.push_back(ex.pattern);
        first.resize(names.size());
        last.resize(names.size());
    }
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        const std::string theory = theory_name_of(timeline[i].theory_snapshot);
        std::optional<std::size_t> idx;
        if (!exercises.empty()) {
            idx = exercise_index(patterns, theory);
        } else if (!theory.empty()) {
            const auto it = std::find(names.begin(), names.end(), theory);
            if (it == names.end()) {
                names.push_back(theory);
                first.emplace_back();
                last.emplace_back();
                idx = names.size() - 1;
            } else {
                idx = static_cast<std::size_t>(it - names.begin());
            }
        }
        if (!idx) continue;
        if (!first[*idx]) first[*idx] = i;
        last[*idx] = i;
    }

    auto active_between = [&](std::size_t from, std::size_t to) {
        std::chrono::milliseconds total{0};
        for (std::size_t j = from; j < to; ++j) {
            const auto gap = timeline[j + 1].timestamp - timeline[j].timestamp;
            if (within_idle(gap, idle_threshold)) total += gap;
        }
        return total;
    };

    std::vector<std::size_t> present;
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (first[k]) present.push_back(k);
    }
    std::vector<ExerciseDuration> out;
    for (std::size_t p = 0; p < present.size(); ++p) {
        const std::size_t k = present[p];
        const std::size_t start = *first[k];
        const std::size_t end = p + 1 < present.size() ? *first[present[p + 1]] : *last[k];
        out.push_back({names[k], end > start ? active_between(start, end) : std::chrono::milliseconds(0)});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::optional<Measure> parse_measure(std::string_view text) {
    if (text == "rank") return Measure::rank;
    if (text == "assoc") return Measure::assoc;
    if (text == "freq") return Measure::freq;
    if (text == "durations") return Measure::durations;
    return std::nullopt;
}

json run_analysis(std::vector<CheckEvent> events, const AnalysisRequest& request, const CategoryTable& table) {
    std::erase_if(events, [&](const CheckEvent& e) {
        return (request.user && e.user != *request.user) || (request.activity && e.activity != *request.activity);
    });
    telemetry::sort_events(events);

    std::vector<UserId> users;
    if (request.user) {
        users.push_back(*request.user);
    } else {
        std::set<UserId> seen;
        for (const auto& e : events) seen.insert(e.user);
        users.assign(seen.begin(), seen.end());
    }

    json out;
    out["events"] = events.size();
    if (request.user) out["user"] = request.user->str();
    if (request.activity) out["activity"] = request.activity->str();
    switch (request.measure) {
    case Measure::rank: {
        out["measure"] = "rank";
        out["group_by"] = request.group_by == GroupBy::all ? "all" : request.group_by == GroupBy::user ? "user" : "activity";
        out["groups"] = json::array();
        for (const auto& g : rank_mistakes(events, request.group_by, table, request.exercises)) {
            json counts = json::array();
            for (const auto& c : g.counts) counts.push_back({{"category", to_string(c.category)}, {"count", c.count}});
            out["groups"].push_back({{"group", g.group}, {"counts", counts}});
        }
        break;
    }
    case Measure::assoc: {
        out["measure"] = "assoc";
        out["rows"] = json::array();
        for (const auto& r : message_mistake_association(events, table).rows) {
            out["rows"].push_back({{"message_category", to_string(r.message_category)},
                                   {"mistake_category", to_string(r.mistake_category)},
                                   {"shown_count", r.shown_count},
                                   {"disappeared_count", r.disappeared_count},
                                   {"ratio", r.ratio}});
        }
        break;
    }
    case Measure::freq: {
        out["measure"] = "freq";
        out["idle_threshold_ms"] = request.idle_threshold.count();
        out["users"] = json::array();
        for (const auto& u : users) {
            const auto f = check_frequency(events, u, request.idle_threshold);
            out["users"].push_back({{"user", u.str()},
                                    {"total_checks", f.total_checks},
                                    {"active_ms", f.active_time.count()},
                                    {"checks_per_active_hour",
                                     f.checks_per_active_hour ? json(*f.checks_per_active_hour) : json(nullptr)}});
        }
        break;
    }
    case Measure::durations: {
        out["measure"] = "durations";
        out["idle_threshold_ms"] = request.idle_threshold.count();
        out["users"] = json::array();
        for (const auto& u : users) {
            json rows = json::array();
            for (const auto& d : exercise_durations(events, u, request.exercises, request.idle_threshold)) {
                rows.push_back({{"exercise", d.exercise}, {"duration_ms", d.duration.count()}});
            }
            out["users"].push_back({{"user", u.str()}, {"exercises", rows}});
        }
        break;
    }
    }
    return out;
}

namespace {

std::string minutes_text(std::int64_t ms) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << static_cast<double>(ms) / 60000.0 << " min";
    return s.str();
}

}  // namespace

std::string render_report(const json& result) {
    std::ostringstream out;
    const std::string measure = result.value("measure", std::string());
    out << "events analysed: " << result.value("events", 0) << "\n";
    if (measure == "rank") {
        for (const auto& g : result["groups"]) {
            const std::string name = g["group"].get<std::string>();
            out << "\nmistake ranking" << (name.empty() ? std::string() : " for " + name) << "\n";
            int place = 1;
            for (const auto& c : g["counts"]) {
                out << "  " << place++ << ". " << c["category"].get<std::string>() << "  " << c["count"].get<std::size_t>() << "\n";
            }
        }
        if (result["groups"].empty()) out << "no mistakes recorded\n";
    } else if (measure == "assoc") {
        out << "\nmessage category -> mistake category: shown / disappeared (ratio)\n";
        for (const auto& r : result["rows"]) {
            std::ostringstream ratio;
            ratio.precision(3);
            ratio << r["ratio"].get<double>();
            out << "  " << r["message_category"].get<std::string>() << " -> " << r["mistake_category"].get<std::string>()
                << ": " << r["shown_count"].get<std::size_t>() << " / " << r["disappeared_count"].get<std::size_t>()
                << " (" << ratio.str() << ")\n";
        }
        if (result["rows"].empty()) out << "  no consecutive results to compare\n";
    } else if (measure == "freq") {
        for (const auto& u : result["users"]) {
            out << "\n" << u["user"].get<std::string>() << ": " << u["total_checks"].get<std::size_t>()
                << " checks, active " << minutes_text(u["active_ms"].get<std::int64_t>());
            if (!u["checks_per_active_hour"].is_null()) {
                std::ostringstream rate;
                rate.precision(3);
                rate << u["checks_per_active_hour"].get<double>();
                out << ", " << rate.str() << " checks per active hour";
            } else {
                out << ", rate n/a";
            }
            out << "\n";
        }
    } else if (measure == "durations") {
        for (const auto& u : result["users"]) {
            out << "\n" << u["user"].get<std::string>() << "\n";
            for (const auto& row : u["exercises"]) {
                out << "  " << row["exercise"].get<std::string>() << "  " << minutes_text(row["duration_ms"].get<std::int64_t>())
                    << "\n";
            }
        }
    }
    return out.str();
}

}  // namespace prooflab::analytics
