#pragma once

#include "prooflab/common.hpp"
#include "prooflab/telemetry/event_store.hpp"

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prooflab::analytics {

using telemetry::CheckEvent;

enum class MistakeCategory { syntactic, type_level, tactic_level, semantic, other };

std::string_view to_string(MistakeCategory c);
MistakeCategory parse_mistake_category(std::string_view text);

/// Case-insensitive substring rules for prover messages; first match wins.
struct CategoryTable {
    struct Rule {
        std::string keyword;
        MistakeCategory category;
    };
    std::vector<Rule> rules;

    static CategoryTable defaults();
};

void from_json(const json& j, CategoryTable& t);
void to_json(json& j, const CategoryTable& t);

/// Structure diagnostics are syntactic; prover messages go through the
/// keyword table; anything unmatched (including linter findings) is other.
MistakeCategory categorize(const Diagnostic& d, const CategoryTable& table = CategoryTable::defaults());

/// An exercise is identified by a regular expression over theory names.
/// Expected statements, when given, enable semantic-mistake detection.
struct ExerciseSpec {
    std::string pattern;
    std::vector<std::string> expected_statements;
};

void from_json(const json& j, ExerciseSpec& e);
void to_json(json& j, const ExerciseSpec& e);

/// Name from the first `theory NAME` header of a snapshot, or empty.
std::string theory_name_of(std::string_view snapshot);

/// Lemma/theorem statements (quoted terms after the keyword), whitespace-normalized.
std::vector<std::string> stated_goals(std::string_view snapshot);

// ---------------------------------------------------------------------------

enum class GroupBy { all, activity, user };

struct CategoryCount {
    MistakeCategory category;
    std::size_t count;

    bool operator==(const CategoryCount&) const = default;
};

struct RankedGroup {
    std::string group;  // empty for GroupBy::all
    std::vector<CategoryCount> counts;  // descending by count, ties in category order

    bool operator==(const RankedGroup&) const = default;
};

/// Counts every diagnostic of every result-received event by category. With
/// exercise oracles, a result whose snapshot does not state the expected
/// goals adds one semantic mistake.
std::vector<RankedGroup> rank_mistakes(std::span<const CheckEvent> events, GroupBy group_by,
                                       const CategoryTable& table = CategoryTable::defaults(),
                                       std::span<const ExerciseSpec> exercises = {});

struct AssociationRow {
    MistakeCategory message_category;
    MistakeCategory mistake_category;
    std::size_t shown_count = 0;
    std::size_t disappeared_count = 0;
    double ratio = 0;

    bool operator==(const AssociationRow&) const = default;
};

struct AssociationTable {
    std::vector<AssociationRow> rows;  // sorted by (message, mistake) category

    const AssociationRow* find(MistakeCategory message, MistakeCategory mistake) const;
    bool operator==(const AssociationTable&) const = default;
};

/// Over consecutive result-received events of the same (user, activity,
/// theory): every message category shown at step i paired with every mistake
/// (error) category present at step i counts as shown; it counts as
/// disappeared when that mistake category is absent at step i+1.
AssociationTable message_mistake_association(std::span<const CheckEvent> events,
                                             const CategoryTable& table = CategoryTable::defaults());

struct CheckFrequency {
    std::size_t total_checks = 0;
    std::chrono::milliseconds active_time{0};
    std::optional<double> checks_per_active_hour;

    bool operator==(const CheckFrequency&) const = default;
};

/// A zero idle threshold disables the idle cut-off.
CheckFrequency check_frequency(std::span<const CheckEvent> events, const UserId& user,
                               std::chrono::milliseconds idle_threshold = std::chrono::minutes(15));

struct ExerciseDuration {
    std::string exercise;
    std::chrono::milliseconds duration{0};

    bool operator==(const ExerciseDuration&) const = default;
};

/// Time from the first event of each exercise to the first event of the next
/// exercise that has events (for the last, to its own last event), excluding
/// gaps above the idle threshold. Without exercise specs, exercises are the
/// theory names in order of first appearance.
std::vector<ExerciseDuration> exercise_durations(std::span<const CheckEvent> events, const UserId& user,
                                                 std::span<const ExerciseSpec> exercises = {},
                                                 std::chrono::milliseconds idle_threshold = std::chrono::minutes(15));

// ---------------------------------------------------------------------------
// Report layer shared by the CLI and the HTTP API.

enum class Measure { rank, assoc, freq, durations };

std::optional<Measure> parse_measure(std::string_view text);

struct AnalysisRequest {
    Measure measure = Measure::rank;
    std::optional<UserId> user;
    std::optional<ActivityId> activity;
    std::chrono::milliseconds idle_threshold = std::chrono::minutes(15);
    GroupBy group_by = GroupBy::all;
    std::vector<ExerciseSpec> exercises;
};

/// Filters by user/activity then computes the requested measure. Per-user
/// measures without a user are reported for every user in the log.
json run_analysis(std::vector<CheckEvent> events, const AnalysisRequest& request,
                  const CategoryTable& table = CategoryTable::defaults());

/// Plain-text rendering of a run_analysis result.
std::string render_report(const json& result);

}  // namespace prooflab::analytics
