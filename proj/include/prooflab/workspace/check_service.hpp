#pragma once

#include "prooflab/lint/linter.hpp"
#include "prooflab/telemetry/event_store.hpp"
#include "prooflab/workspace/channel.hpp"
#include "prooflab/workspace/prover_gateway.hpp"
#include "prooflab/workspace/workspace.hpp"

#include <deque>
#include <functional>
#include <memory>

namespace prooflab::workspace {

/// Terminal and transient states of a check. Everything after `running`
/// is terminal.
enum class CheckStatus {
    queued,
    running,
    ok,                  // prover finished without errors
    errors,              // prover finished and reported errors
    structure_rejected,  // pre-assessment failed, prover not contacted
    lint_rejected,       // enforced ruleset reported errors, prover not contacted
    unchanged,           // nothing to send; cached diagnostics returned
    failed,              // prover could not check (unavailable, task failure, I/O)
};

std::string_view to_string(CheckStatus s);
CheckStatus parse_check_status(std::string_view text);
inline bool is_terminal(CheckStatus s) { return s != CheckStatus::queued && s != CheckStatus::running; }

struct DocumentResult {
    std::string name;
    bool checked = false;  // false when skipped as unchanged
    std::vector<Diagnostic> diagnostics;
};

/// Everything a client needs to render a finished check; identical whether it
/// arrives on the realtime channel or from a re-fetch.
struct CheckResult {
    CheckId id;
    UserId user;
    ActivityId activity;
    std::vector<std::string> names;
    CheckStatus status = CheckStatus::queued;
    std::string message;
    std::vector<DocumentResult> documents;
    std::optional<telemetry::Durations> durations;
    Timestamp submitted{};
    std::optional<Timestamp> completed;

    std::vector<Diagnostic> diagnostics() const;
};

void to_json(json& j, const CheckResult& r);
void from_json(const json& j, CheckResult& r);

struct RequestTiming {
    CheckId check;
    Timestamp completed{};
    std::chrono::milliseconds server_handling{0};
    std::chrono::milliseconds prover_wait{0};
    std::chrono::milliseconds queue_wait{0};
    std::chrono::milliseconds total{0};
};

struct CheckServiceOptions {
    std::size_t worker_threads = 8;
    std::chrono::hours result_retention{24};
    std::chrono::milliseconds maintenance_interval = std::chrono::seconds(60);
    std::size_t timing_samples = 4096;
};

/// End-to-end check orchestration. submit_check snapshots the documents into
/// telemetry before returning; the rest runs on a worker pool with one strand
/// per user, so a user's checks run in submission order while different users
/// proceed in parallel. Results go to the user's channel and are persisted for
/// re-fetch.
class CheckService {
public:
    using RulesetLookup = std::function<std::shared_ptr<const lint::Ruleset>(const ActivityId&)>;

    /// `gateway` may be null, in which case every prover-bound check fails
    /// with prover-unavailable.
    CheckService(Workspace& workspace, telemetry::EventStore& events, ChannelHub& channel, ProverGateway* gateway,
                 RulesetLookup rulesets, CheckServiceOptions options = {});
    ~CheckService();
    CheckService(const CheckService&) = delete;
    CheckService& operator=(const CheckService&) = delete;

    /// Throws Error(not_found) for a missing document, Error(invalid_argument)
    /// for an empty request. `lint_enabled` is ignored when the activity does
    /// not let students toggle the linter.
    CheckId submit_check(const User& user, const ActivityId& activity, const std::vector<std::string>& names,
                         bool lint_enabled = true);

    std::optional<CheckResult> result(const CheckId& id) const;

    /// Blocks until no check is queued or running.
    void drain();

    std::vector<RequestTiming> timings() const;
    std::size_t pending() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace prooflab::workspace
