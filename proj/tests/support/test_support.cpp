#include "test_support.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace prooflab::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    path_ = fs::temp_directory_path() / ("prooflab-test-" + random_hex(8));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return PROOFLAB_FIXTURE_DIR; }

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& file, std::string_view content) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

bool chance(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

}  // namespace

std::string random_theory_text(std::mt19937_64& rng, std::size_t fragments, bool valid_utf8) {
    static const std::vector<std::string> pool = {
        "theory", "imports", "Main", "begin", "end", "lemma", "proof", "qed", "by", "apply", "done", "auto",
        "simp", "sorry", "oops", "x'", "foo_bar", "42", " ", " ", "  ", "\n", "\n", "\t", "\r\n", "\"", "\\\"",
        "(*", "*)", "(", ")", "[", "]", "{", "}", ":", ".", "\\", "\\<and>", "\\<^sub>", "\\<open>", "\\<close>",
        "\xE2\x80\xB9", "\xE2\x80\xBA", "\xE2\x88\xA7", "\xE2\x9F\xA6", "\xE2\x9F\xA7", "\xC3\xA9", "\xF0\x9F\x98\x80",
        "\xFF", "\xE2\x80", "\x80", "\x01", "text",
    };
    static const std::set<std::string> malformed = {"\xFF", "\xE2\x80", "\x80"};
    std::string out;
    for (std::size_t i = 0; i < fragments; ++i) {
        const auto& f = pick(rng, pool);
        if (!valid_utf8 || !malformed.contains(f)) out += f;
    }
    return out;
}

std::string random_wellformed_theory(std::mt19937_64& rng, const std::string& name) {
    static const std::vector<std::string> props = {"A \\<and> B \\<longrightarrow> B \\<and> A", "P x \\<Longrightarrow> P x",
                                                   "(A \\<or> B) = (B \\<or> A)", "xs @ [] = xs"};
    std::string out = "theory " + name + "\n  imports Main\nbegin\n\n";
    const int lemmas = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int i = 0; i < lemmas; ++i) {
        out += "lemma l" + std::to_string(i) + ": \"" + pick(rng, props) + "\"\n";
        if (chance(rng, 0.5)) {
            out += "proof -\n  show ?thesis by (rule impI)\nqed\n\n";
        } else {
            out += "  apply (rule conjI)\n  apply assumption\n  done\n\n";
        }
    }
    out += "end\n";
    return out;
}

// ---------------------------------------------------------------------------
// Lint oracle

std::vector<OracleRule> oracle_rules(const json& linter_config) {
    std::vector<OracleRule> rules;
    for (const auto& b : linter_config.value("builtins", json::array())) {
        if (b.get<std::string>() != "no-automation") throw std::runtime_error("oracle: unknown builtin");
        for (const char* tactic : {"auto", "simp", "arith", "blast"}) {
            rules.push_back({std::string("no-automation/") + tactic, tactic, Severity::warning,
                             "automatic tactic '{token}' is not allowed in this activity"});
        }
    }
    for (const auto& r : linter_config.value("rules", json::array())) {
        rules.push_back({r.at("id").get<std::string>(), r.at("pattern").get<std::string>(),
                         r.value("severity", std::string("warning")) == "error" ? Severity::error : Severity::warning,
                         r.value("message", std::string("'{token}' is not allowed in this activity"))});
    }
    return rules;
}

std::string mask_protected(std::string_view text) {
    static const std::regex symbol_escape(R"(\\<\^?[A-Za-z0-9_']+>)");
    const std::string open_u = "\xE2\x80\xB9", close_u = "\xE2\x80\xBA";
    const std::string open_a = "\\<open>", close_a = "\\<close>";
    std::string out(text);
    auto at = [&](std::size_t i, std::string_view s) { return text.substr(i, s.size()) == s; };
    auto blank = [&](std::size_t from, std::size_t to) {
        for (std::size_t k = from; k < to && k < out.size(); ++k) {
            if (out[k] != '\n') out[k] = ' ';
        }
    };
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        if (at(i, "(*")) {
            int depth = 0;
            while (i < text.size()) {
                if (at(i, "(*")) {
                    ++depth;
                    i += 2;
                } else if (at(i, "*)")) {
                    i += 2;
                    if (--depth == 0) break;
                } else {
                    ++i;
                }
            }
            blank(start, i);
        } else if (text[i] == '"') {
            ++i;
            while (i < text.size()) {
                if (text[i] == '\\' && i + 1 < text.size()) {
                    i += 2;
                } else if (text[i++] == '"') {
                    break;
                }
            }
            blank(start, i);
        } else if (at(i, open_u) || at(i, open_a)) {
            int depth = 0;
            while (i < text.size()) {
                if (at(i, open_u) || at(i, open_a)) {
                    ++depth;
                    i += at(i, open_u) ? open_u.size() : open_a.size();
                } else if (at(i, close_u) || at(i, close_a)) {
                    i += at(i, close_u) ? close_u.size() : close_a.size();
                    if (--depth == 0) break;
                } else {
                    ++i;
                }
            }
            blank(start, i);
        } else {
            std::match_results<std::string_view::const_iterator> m;
            if (text[i] == '\\' && std::regex_search(text.begin() + static_cast<std::ptrdiff_t>(i), text.end(), m,
                                                      symbol_escape, std::regex_constants::match_continuous)) {
                i += static_cast<std::size_t>(m.length(0));
                blank(start, i);
            } else {
                ++i;
            }
        }
    }
    return out;
}

std::vector<Diagnostic> lint_oracle(std::string_view text, const std::vector<OracleRule>& rules) {
    std::vector<std::regex> compiled;
    for (const auto& r : rules) compiled.emplace_back(r.pattern);
    const std::string masked = mask_protected(text);
    static const std::regex word(R"([A-Za-z_][A-Za-z0-9_']*|[0-9]+)");

    std::vector<Diagnostic> out;
    for (auto it = std::sregex_iterator(masked.begin(), masked.end(), word); it != std::sregex_iterator(); ++it) {
        const auto offset = static_cast<std::size_t>(it->position(0));
        const std::string token = it->str(0);
        // Position measured on the original text: code points since the last line feed.
        int line = 1;
        std::size_t line_start = 0;
        for (std::size_t k = 0; k < offset; ++k) {
            if (text[k] == '\n') {
                ++line;
                line_start = k + 1;
            }
        }
        int column = 0;
        for (std::size_t k = line_start; k < offset; ++k) {
            if ((static_cast<unsigned char>(text[k]) & 0xC0) != 0x80) ++column;
        }
        for (std::size_t r = 0; r < rules.size(); ++r) {
            if (!std::regex_match(token, compiled[r])) continue;
            std::string message = rules[r].message_template;
            for (std::size_t p = message.find("{token}"); p != std::string::npos; p = message.find("{token}", p + token.size())) {
                message.replace(p, 7, token);
            }
            out.push_back(Diagnostic{DiagnosticSource::linter, rules[r].severity, rules[r].id, message,
                                     SourceRange{line, column, line, column + static_cast<int>(token.size())}});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Analytics oracles

namespace {

using analytics::MistakeCategory;
using telemetry::CheckEvent;
using telemetry::EventKind;

constexpr MistakeCategory kCategories[] = {MistakeCategory::syntactic, MistakeCategory::type_level,
                                           MistakeCategory::tactic_level, MistakeCategory::semantic,
                                           MistakeCategory::other};

MistakeCategory oracle_category(const Diagnostic& d) {
    if (d.source == DiagnosticSource::structure) return MistakeCategory::syntactic;
    if (d.source == DiagnosticSource::linter) return MistakeCategory::other;
    static const std::vector<std::pair<std::regex, MistakeCategory>> table = [] {
        std::vector<std::pair<std::regex, MistakeCategory>> t;
        for (const auto& rule : analytics::CategoryTable::defaults().rules) {
            t.emplace_back(std::regex(rule.keyword, std::regex::icase | std::regex::nosubs), rule.category);
        }
        return t;
    }();
    for (const auto& [re, cat] : table) {
        if (std::regex_search(d.message, re)) return cat;
    }
    return MistakeCategory::other;
}

std::string oracle_theory(const std::string& snapshot) {
    static const std::regex header(R"(theory\s+([A-Za-z][A-Za-z0-9_']*))");
    std::smatch m;
    return std::regex_search(snapshot, m, header) ? m.str(1) : std::string();
}

std::string squeeze(const std::string& s) {
    std::istringstream in(s);
    std::string word, out;
    while (in >> word) out += (out.empty() ? "" : " ") + word;
    return out;
}

std::set<std::string> oracle_goals(const std::string& snapshot) {
    static const std::regex goal("lemma[^\"\\n]*\"([^\"]*)\"");
    std::set<std::string> goals;
    for (auto it = std::sregex_iterator(snapshot.begin(), snapshot.end(), goal); it != std::sregex_iterator(); ++it) {
        goals.insert(squeeze(it->str(1)));
    }
    return goals;
}

const analytics::ExerciseSpec* oracle_exercise(const std::vector<analytics::ExerciseSpec>& specs,
                                               const std::string& theory, std::size_t* index = nullptr) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (std::regex_match(theory, std::regex(specs[i].pattern))) {
            if (index) *index = i;
            return &specs[i];
        }
    }
    return nullptr;
}

bool before(const CheckEvent& a, const CheckEvent& b) {
    return a.timestamp < b.timestamp || (a.timestamp == b.timestamp && a.event_id < b.event_id);
}

std::vector<const CheckEvent*> timeline_of(const std::vector<CheckEvent>& events, const UserId& user) {
    std::vector<const CheckEvent*> out;
    for (const auto& e : events) {
        if (e.user == user) out.push_back(&e);
    }
    // Insertion sort keeps the oracle free of the library's ordering helper.
    for (std::size_t i = 1; i < out.size(); ++i) {
        for (std::size_t j = i; j > 0 && before(*out[j], *out[j - 1]); --j) std::swap(out[j], out[j - 1]);
    }
    return out;
}

bool active_gap(std::chrono::milliseconds gap, std::chrono::milliseconds idle) {
    return idle.count() == 0 || gap <= idle;
}

}  // namespace

std::vector<analytics::RankedGroup> rank_oracle(const std::vector<CheckEvent>& events, analytics::GroupBy group_by,
                                                const std::vector<analytics::ExerciseSpec>& exercises) {
    std::set<std::string> keys;
    auto key_of = [&](const CheckEvent& e) {
        switch (group_by) {
        case analytics::GroupBy::user: return e.user.str();
        case analytics::GroupBy::activity: return e.activity.str();
        default: return std::string();
        }
    };
    for (const auto& e : events) keys.insert(key_of(e));

    std::vector<analytics::RankedGroup> out;
    for (const auto& key : keys) {
        std::vector<analytics::CategoryCount> counts;
        for (auto cat : kCategories) {
            std::size_t n = 0;
            for (const auto& e : events) {
                if (e.kind != EventKind::result_received || key_of(e) != key) continue;
                for (const auto& d : e.diagnostics) n += oracle_category(d) == cat ? 1 : 0;
                if (cat == MistakeCategory::semantic) {
                    const auto* spec = oracle_exercise(exercises, oracle_theory(e.theory_snapshot));
                    if (spec && !spec->expected_statements.empty()) {
                        const auto goals = oracle_goals(e.theory_snapshot);
                        for (const auto& s : spec->expected_statements) {
                            if (!goals.contains(squeeze(s))) {
                                ++n;
                                break;
                            }
                        }
                    }
                }
            }
            if (n > 0) counts.push_back({cat, n});
        }
        // Selection by (count desc, category order).
        std::vector<analytics::CategoryCount> ranked;
        while (!counts.empty()) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < counts.size(); ++i) {
                if (counts[i].count > counts[best].count) best = i;
            }
            ranked.push_back(counts[best]);
            counts.erase(counts.begin() + static_cast<std::ptrdiff_t>(best));
        }
        if (!ranked.empty()) out.push_back({key, ranked});
    }
    return out;
}

analytics::AssociationTable assoc_oracle(const std::vector<CheckEvent>& events) {
    std::map<std::pair<MistakeCategory, MistakeCategory>, std::pair<std::size_t, std::size_t>> cells;
    for (const auto& e : events) {
        if (e.kind != EventKind::result_received) continue;
        const std::string theory = oracle_theory(e.theory_snapshot);
        // The immediate successor in the same (user, activity, theory) chain.
        const CheckEvent* next = nullptr;
        for (const auto& f : events) {
            if (f.kind != EventKind::result_received || f.user != e.user || f.activity != e.activity) continue;
            if (oracle_theory(f.theory_snapshot) != theory || !before(e, f)) continue;
            if (!next || before(f, *next)) next = &f;
        }
        if (!next) continue;
        auto errors_of = [](const CheckEvent& ev, MistakeCategory cat) {
            return std::any_of(ev.diagnostics.begin(), ev.diagnostics.end(), [&](const Diagnostic& d) {
                return d.severity == Severity::error && oracle_category(d) == cat;
            });
        };
        for (auto message : kCategories) {
            const bool shown = std::any_of(e.diagnostics.begin(), e.diagnostics.end(),
                                           [&](const Diagnostic& d) { return oracle_category(d) == message; });
            if (!shown) continue;
            for (auto mistake : kCategories) {
                if (!errors_of(e, mistake)) continue;
                auto& cell = cells[{message, mistake}];
                ++cell.first;
                if (!errors_of(*next, mistake)) ++cell.second;
            }
        }
    }
    analytics::AssociationTable table;
    for (const auto& [key, cell] : cells) {
        table.rows.push_back({key.first, key.second, cell.first, cell.second,
                              static_cast<double>(cell.second) / static_cast<double>(cell.first)});
    }
    return table;
}

analytics::CheckFrequency freq_oracle(const std::vector<CheckEvent>& events, const UserId& user,
                                      std::chrono::milliseconds idle) {
    const auto timeline = timeline_of(events, user);
    analytics::CheckFrequency f;
    for (const auto* e : timeline) f.total_checks += e->kind == EventKind::check_submitted ? 1 : 0;
    for (std::size_t i = 1; i < timeline.size(); ++i) {
        const auto gap = timeline[i]->timestamp - timeline[i - 1]->timestamp;
        if (active_gap(gap, idle)) f.active_time += gap;
    }
    if (f.total_checks > 0 && f.active_time.count() > 0) {
        f.checks_per_active_hour =
            static_cast<double>(f.total_checks) * 3'600'000.0 / static_cast<double>(f.active_time.count());
    }
    return f;
}

std::vector<analytics::ExerciseDuration> durations_oracle(const std::vector<CheckEvent>& events, const UserId& user,
                                                          const std::vector<analytics::ExerciseSpec>& exercises,
                                                          std::chrono::milliseconds idle) {
    const auto timeline = timeline_of(events, user);
    // (exercise label, first index, last index) in exercise order.
    struct Span {
        std::string label;
        std::optional<std::size_t> first, last;
    };
    std::vector<Span> spans;
    for (const auto& ex : exercises) spans.push_back({ex.pattern, {}, {}});
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        const std::string theory = oracle_theory(timeline[i]->theory_snapshot);
        std::size_t k = 0;
        if (!exercises.empty()) {
            if (!oracle_exercise(exercises, theory, &k)) continue;
        } else {
            if (theory.empty()) continue;
            k = spans.size();
            for (std::size_t s = 0; s < spans.size(); ++s) {
                if (spans[s].label == theory) k = s;
            }
            if (k == spans.size()) spans.push_back({theory, {}, {}});
        }
        if (!spans[k].first) spans[k].first = i;
        spans[k].last = i;
    }
    std::erase_if(spans, [](const Span& s) { return !s.first; });

    std::vector<analytics::ExerciseDuration> out;
    for (std::size_t s = 0; s < spans.size(); ++s) {
        const std::size_t start = *spans[s].first;
        const std::size_t end = s + 1 < spans.size() ? *spans[s + 1].first : *spans[s].last;
        std::chrono::milliseconds total{0};
        for (std::size_t g = 0; g + 1 < timeline.size(); ++g) {
            if (g < start || g >= end) continue;
            const auto gap = timeline[g + 1]->timestamp - timeline[g]->timestamp;
            if (active_gap(gap, idle)) total += gap;
        }
        out.push_back({spans[s].label, total});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<analytics::ExerciseSpec> synthetic_exercises() {
    return {
        {"Ex1_.*", {"A \\<and> B \\<longrightarrow> B \\<and> A"}},
        {"Ex2_.*", {"(A \\<longrightarrow> B) \\<longrightarrow> \\<not> B \\<longrightarrow> \\<not> A"}},
        {"Ex3_.*", {}},
    };
}

std::vector<CheckEvent> synthetic_log(std::uint64_t seed, std::size_t count) {
    std::mt19937_64 rng(seed);
    struct Exercise {
        std::string theory;
        std::string good;
        std::string bad;
    };
    const std::vector<Exercise> exercises = {
        {"Ex1_Comm", "A \\<and> B \\<longrightarrow> B \\<and> A", "A \\<and> B \\<longrightarrow> A"},
        {"Ex2_Contra", "(A \\<longrightarrow> B) \\<longrightarrow> \\<not> B \\<longrightarrow> \\<not> A",
         "(A \\<longrightarrow> B) \\<longrightarrow> B"},
        {"Ex3_Dist", "A \\<and> (B \\<or> C) \\<longrightarrow> (A \\<and> B) \\<or> (A \\<and> C)", "A"},
    };
    const std::vector<Diagnostic> pool = {
        {DiagnosticSource::prover, Severity::error, std::nullopt, "Type unification failed: Clash of types", {3, 0, 3, 10}},
        {DiagnosticSource::prover, Severity::error, std::nullopt, "Failed to apply initial proof method", {5, 2, 5, 20}},
        {DiagnosticSource::prover, Severity::error, std::nullopt, "Failed to finish proof", {6, 2, 6, 6}},
        {DiagnosticSource::prover, Severity::error, std::nullopt, "Undefined fact: \"conjE2\"", {4, 9, 4, 15}},
        {DiagnosticSource::prover, Severity::error, std::nullopt, "Inner syntax error at \"\\<and>\"", {3, 12, 3, 13}},
        {DiagnosticSource::prover, Severity::error, std::nullopt, "unfinished proof", {7, 2, 7, 7}},
        {DiagnosticSource::prover, Severity::warning, std::nullopt, "Ignoring duplicate rule", {4, 0, 4, 5}},
        {DiagnosticSource::prover, Severity::info, std::nullopt, "Type error hint: consider annotations", {3, 0, 3, 1}},
        {DiagnosticSource::structure, Severity::error, std::string("unbalanced-bracket"), "unclosed '('", {5, 8, 5, 9}},
        {DiagnosticSource::linter, Severity::warning, std::string("no-automation/auto"), "'auto' is not allowed", {5, 9, 5, 13}},
    };
    const std::vector<std::string> users = {"ann", "ben", "cho", "dev", "eli"};
    const std::vector<std::string> activities = {"demo", "demo2"};

    struct UserState {
        Timestamp clock;
        std::size_t exercise = 0;
        std::string activity;
        bool awaiting_result = false;
        std::string snapshot;
    };
    std::map<std::string, UserState> state;
    const Timestamp base = from_epoch_ms(1'700'000'000'000);
    for (std::size_t u = 0; u < users.size(); ++u) {
        state[users[u]] = {base + std::chrono::minutes(3 * static_cast<int>(u)), 0, activities[u % 2], false, {}};
    }

    std::vector<CheckEvent> out;
    for (std::size_t n = 0; n < count; ++n) {
        const std::string& name = pick(rng, users);
        auto& st = state[name];
        const bool long_pause = chance(rng, 0.06);
        st.clock += long_pause ? std::chrono::minutes(40) : std::chrono::milliseconds(
                                                                std::uniform_int_distribution<int>(0, 300'000)(rng));
        CheckEvent e;
        e.event_id = static_cast<std::int64_t>(n + 1);
        e.user = UserId(name);
        e.activity = ActivityId(chance(rng, 0.1) ? activities[(st.activity == "demo" ? 1 : 0)] : st.activity);
        e.timestamp = st.clock;
        if (!st.awaiting_result) {
            if (chance(rng, 0.25) && st.exercise + 1 < exercises.size()) ++st.exercise;
            const auto& ex = exercises[st.exercise];
            st.snapshot = "theory " + ex.theory + "\n  imports Main\nbegin\n\nlemma goal: \"" +
                          (chance(rng, 0.7) ? ex.good : ex.bad) + "\"\n  apply (rule impI)\n  " +
                          (chance(rng, 0.5) ? "apply auto\n" : "sorry\n") + "end\n";
            e.kind = EventKind::check_submitted;
            st.awaiting_result = true;
        } else {
            const double r = std::uniform_real_distribution<double>(0, 1)(rng);
            e.kind = r < 0.75 ? EventKind::result_received : r < 0.9 ? EventKind::lint_shown : EventKind::structure_rejected;
            if (e.kind != EventKind::lint_shown) st.awaiting_result = false;
            const int k = std::uniform_int_distribution<int>(0, 3)(rng);
            for (int i = 0; i < k; ++i) e.diagnostics.push_back(pick(rng, pool));
            if (e.kind == EventKind::result_received) {
                e.durations = telemetry::Durations{std::chrono::milliseconds(std::uniform_int_distribution<int>(1, 40)(rng)),
                                                   std::chrono::milliseconds(std::uniform_int_distribution<int>(0, 900)(rng))};
            }
        }
        e.theory_snapshot = st.snapshot;
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace prooflab::testing
