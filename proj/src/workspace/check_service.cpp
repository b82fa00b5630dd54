#include "prooflab/workspace/check_service.hpp"

#include "prooflab/isar/structure.hpp"
#include "prooflab/isar/tokenizer.hpp"

#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>

#include <algorithm>
#include <condition_variable>
#include <set>
#include <thread>

namespace prooflab::workspace {

namespace asio = boost::asio;
using std::chrono::milliseconds;
using SteadyClock = std::chrono::steady_clock;

std::string_view to_string(CheckStatus s) {
    switch (s) {
    case CheckStatus::queued: return "queued";
    case CheckStatus::running: return "running";
    case CheckStatus::ok: return "ok";
    case CheckStatus::errors: return "errors";
    case CheckStatus::structure_rejected: return "structure-rejected";
    case CheckStatus::lint_rejected: return "lint-rejected";
    case CheckStatus::unchanged: return "unchanged";
    case CheckStatus::failed: return "failed";
    }
    return "failed";
}

CheckStatus parse_check_status(std::string_view text) {
    for (auto s : {CheckStatus::queued, CheckStatus::running, CheckStatus::ok, CheckStatus::errors,
                   CheckStatus::structure_rejected, CheckStatus::lint_rejected, CheckStatus::unchanged,
                   CheckStatus::failed}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown check status: " + std::string(text));
}

std::vector<Diagnostic> CheckResult::diagnostics() const {
    std::vector<Diagnostic> out;
    for (const auto& d : documents) out.insert(out.end(), d.diagnostics.begin(), d.diagnostics.end());
    return out;
}

void to_json(json& j, const CheckResult& r) {
    json docs = json::array();
    for (const auto& d : r.documents) {
        docs.push_back({{"name", d.name}, {"checked", d.checked}, {"diagnostics", d.diagnostics}});
    }
    j = json{{"check_id", r.id},
             {"user", r.user},
             {"activity", r.activity},
             {"names", r.names},
             {"status", to_string(r.status)},
             {"final", is_terminal(r.status)},
             {"message", r.message},
             {"documents", docs},
             {"diagnostics", r.diagnostics()},
             {"submitted", format_timestamp(r.submitted)},
             {"completed", r.completed ? json(format_timestamp(*r.completed)) : json(nullptr)}};
    if (r.durations) {
        j["durations"] = {{"server_handling_ms", r.durations->server_handling.count()},
                          {"prover_ms", r.durations->prover.count()}};
    } else {
        j["durations"] = nullptr;
    }
}

void from_json(const json& j, CheckResult& r) {
    r.id = j.at("check_id").get<CheckId>();
    r.user = j.at("user").get<UserId>();
    r.activity = j.at("activity").get<ActivityId>();
    r.names = j.at("names").get<std::vector<std::string>>();
    r.status = parse_check_status(j.at("status").get<std::string>());
    r.message = j.value("message", std::string());
    r.documents.clear();
    for (const auto& d : j.at("documents")) {
        r.documents.push_back(
            {d.at("name").get<std::string>(), d.at("checked").get<bool>(), d.at("diagnostics").get<std::vector<Diagnostic>>()});
    }
    r.submitted = parse_timestamp(j.at("submitted").get<std::string>());
    if (const auto& c = j.at("completed"); !c.is_null()) {
        r.completed = parse_timestamp(c.get<std::string>());
    } else {
        r.completed.reset();
    }
    if (const auto& d = j.at("durations"); !d.is_null()) {
        r.durations = telemetry::Durations{milliseconds(d.at("server_handling_ms").get<std::int64_t>()),
                                           milliseconds(d.at("prover_ms").get<std::int64_t>())};
    } else {
        r.durations.reset();
    }
}

namespace {

constexpr std::string_view kSchema = R"sql(
CREATE TABLE IF NOT EXISTS checks (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    status TEXT NOT NULL,
    submitted_ms INTEGER NOT NULL,
    completed_ms INTEGER,
    result TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS checks_completed ON checks(completed_ms);
)sql";

milliseconds since(SteadyClock::time_point t) {
    return std::chrono::duration_cast<milliseconds>(SteadyClock::now() - t);
}

/// Prover theory names may be session-qualified ("Draft.Foo").
bool names_theory(const std::string& prover_name, const std::string& doc_name) {
    if (prover_name == doc_name) return true;
    const auto dot = prover_name.rfind('.');
    return dot != std::string::npos && prover_name.substr(dot + 1) == doc_name;
}

Diagnostic from_prover(const protocol::ProverMessage& m) {
    return Diagnostic{DiagnosticSource::prover, m.kind, std::nullopt, m.text, m.position.value_or(SourceRange{})};
}

bool has_errors(const std::vector<Diagnostic>& ds) {
    return std::any_of(ds.begin(), ds.end(), [](const Diagnostic& d) { return d.severity == Severity::error; });
}

}  // namespace

struct CheckService::Impl {
    using Strand = asio::strand<asio::thread_pool::executor_type>;

    struct Job {
        CheckResult record;
        std::vector<TheoryDocument> docs;
        std::string snapshot;
        bool lint_enabled = true;
        SteadyClock::time_point accepted;
        milliseconds submit_cost{0};
    };

    Impl(Workspace& ws, telemetry::EventStore& ev, ChannelHub& ch, ProverGateway* gw, RulesetLookup rs,
         CheckServiceOptions o)
        : workspace(ws),
          events(ev),
          channel(ch),
          gateway(gw),
          rulesets(std::move(rs)),
          options(o),
          db(ws.data_dir() / "workspace.db"),
          pool(std::max<std::size_t>(1, o.worker_threads)) {
        db.exec(kSchema);
        recover_interrupted();
        maintenance = std::thread([this] { maintenance_loop(); });
    }

    ~Impl() {
        {
            std::lock_guard lock(mutex);
            stopping = true;
        }
        cv.notify_all();
        pool.join();
        if (maintenance.joinable()) maintenance.join();
    }

    void recover_interrupted() {
        std::vector<CheckResult> stale;
        {
            auto st = db.prepare("SELECT result FROM checks WHERE status IN ('queued', 'running')");
            while (st.step()) stale.push_back(json::parse(st.column_text(0)).get<CheckResult>());
        }
        for (auto& r : stale) {
            r.status = CheckStatus::failed;
            r.message = "interrupted by server restart";
            r.completed = now_ms();
            persist(r);
        }
    }

    void persist(const CheckResult& r) {
        std::lock_guard lock(db_mutex);
        db.prepare("INSERT INTO checks (id, user_id, status, submitted_ms, completed_ms, result) "
                   "VALUES (?1, ?2, ?3, ?4, ?5, ?6) ON CONFLICT(id) DO UPDATE SET status = excluded.status, "
                   "completed_ms = excluded.completed_ms, result = excluded.result")
            .bind(1, r.id.str())
            .bind(2, r.user.str())
            .bind(3, to_string(r.status))
            .bind(4, to_epoch_ms(r.submitted))
            .bind(5, r.completed ? std::optional<std::int64_t>(to_epoch_ms(*r.completed)) : std::nullopt)
            .bind(6, json(r).dump())
            .run();
    }

    Strand& strand_for(const UserId& user) {
        auto it = strands.find(user);
        if (it == strands.end()) it = strands.emplace(user, asio::make_strand(pool.get_executor())).first;
        return it->second;
    }

    void maintenance_loop() {
        std::unique_lock lock(mutex);
        while (!stopping) {
            cv.wait_for(lock, options.maintenance_interval, [&] { return stopping; });
            if (stopping) break;
            lock.unlock();
            try {
                if (gateway) gateway->reap_idle();
                const auto cutoff = to_epoch_ms(now_ms() - options.result_retention);
                std::lock_guard db_lock(db_mutex);
                db.prepare("DELETE FROM checks WHERE completed_ms IS NOT NULL AND completed_ms < ?1").bind(1, cutoff).run();
            } catch (const std::exception&) {
                // Maintenance is best effort; the next round retries.
            }
            lock.lock();
        }
    }

    void record(const Job& job, telemetry::EventKind kind, std::vector<Diagnostic> diagnostics,
                std::optional<telemetry::Durations> durations = std::nullopt) {
        telemetry::CheckEvent e;
        e.user = job.record.user;
        e.activity = job.record.activity;
        e.kind = kind;
        e.theory_snapshot = job.snapshot;
        e.diagnostics = std::move(diagnostics);
        e.durations = durations;
        events.record_event(std::move(e));
    }

    void run(Job& job) {
        const auto started = SteadyClock::now();
        const milliseconds queue_wait = std::chrono::duration_cast<milliseconds>(started - job.accepted);
        milliseconds prover_wait{0};
        CheckResult& r = job.record;
        r.status = CheckStatus::running;
        {
            std::lock_guard lock(mutex);
            live[r.id] = r;
        }
        try {
            persist(r);
        } catch (const std::exception&) {
        }
        channel.publish(r.user, {{"type", "progress"}, {"check_id", r.id}, {"stage", "running"}});

        std::vector<Diagnostic> result_diagnostics;
        try {
            result_diagnostics = evaluate(job, prover_wait);
        } catch (const std::exception& e) {
            const auto* err = dynamic_cast<const Error*>(&e);
            const std::string code(err ? to_string(err->code()) : "internal-error");
            r.status = CheckStatus::failed;
            r.message = e.what();
            r.documents.clear();
            for (const auto& d : job.docs) r.documents.push_back({d.name, false, {}});
            Diagnostic d{DiagnosticSource::prover, Severity::error, code, e.what(), SourceRange{}};
            if (!r.documents.empty()) r.documents.front().diagnostics.push_back(d);
            result_diagnostics = {d};
        }

        const milliseconds handling = job.submit_cost + since(started) - prover_wait;
        r.durations = telemetry::Durations{std::max(handling, milliseconds(0)), prover_wait};
        try {
            record(job, telemetry::EventKind::result_received, result_diagnostics, r.durations);
        } catch (const std::exception& e) {
            r.message += (r.message.empty() ? "" : "; ") + std::string("telemetry: ") + e.what();
        }
        r.completed = now_ms();
        try {
            persist(r);
        } catch (const std::exception&) {
            // The in-memory copy still answers re-fetches until restart.
        }
        channel.publish(r.user, {{"type", "result"}, {"check_id", r.id}, {"result", r}});

        std::lock_guard lock(mutex);
        live.erase(r.id);
        recent[r.id] = r;
        recent_order.push_back(r.id);
        while (recent_order.size() > 1024) {
            recent.erase(recent_order.front());
            recent_order.pop_front();
        }
        timings.push_back({r.id, *r.completed, r.durations->server_handling, prover_wait, queue_wait,
                           job.submit_cost + since(started)});
        while (timings.size() > options.timing_samples) timings.pop_front();
        --pending;
        idle_cv.notify_all();
    }

    /// Fills in the result; returns the diagnostics recorded with result-received.
    std::vector<Diagnostic> evaluate(Job& job, milliseconds& prover_wait) {
        CheckResult& r = job.record;
        const auto ruleset = rulesets ? rulesets(r.activity) : nullptr;
        const bool lint_on = ruleset && !ruleset->empty() && (job.lint_enabled || !ruleset->student_toggleable);

        std::vector<Diagnostic> structure, lint_findings;
        std::map<std::string, std::vector<Diagnostic>> structure_by_doc, lint_by_doc;
        for (const auto& doc : job.docs) {
            const auto tokens = isar::tokenize(doc.content);
            for (const auto& s : isar::check_structure(tokens)) {
                structure_by_doc[doc.name].push_back(isar::to_diagnostic(s));
                structure.push_back(isar::to_diagnostic(s));
            }
            if (lint_on) {
                for (auto& d : lint::lint(doc.content, *ruleset)) {
                    lint_findings.push_back(d);
                    lint_by_doc[doc.name].push_back(std::move(d));
                }
            }
        }
        if (!lint_findings.empty()) {
            record(job, telemetry::EventKind::lint_shown, lint_findings);
            json docs = json::array();
            for (const auto& [name, ds] : lint_by_doc) docs.push_back({{"name", name}, {"diagnostics", ds}});
            channel.publish(r.user, {{"type", "lint"}, {"check_id", r.id}, {"documents", docs}});
        }

        auto fill = [&](const std::map<std::string, std::vector<Diagnostic>>& by_doc) {
            r.documents.clear();
            for (const auto& doc : job.docs) {
                const auto it = by_doc.find(doc.name);
                r.documents.push_back({doc.name, false, it == by_doc.end() ? std::vector<Diagnostic>{} : it->second});
            }
        };

        if (!structure.empty()) {
            r.status = CheckStatus::structure_rejected;
            r.message = std::to_string(structure.size()) + " structural problem(s); not sent to the prover";
            fill(structure_by_doc);
            record(job, telemetry::EventKind::structure_rejected, structure);
            return structure;
        }
        if (lint_on && ruleset->enforce && has_errors(lint_findings)) {
            r.status = CheckStatus::lint_rejected;
            r.message = "restricted constructs used; not sent to the prover";
            fill(lint_by_doc);
            return lint_findings;
        }

        const CheckPlan plan = workspace.plan_check(r.user, job.docs);
        std::map<std::string, std::vector<Diagnostic>> by_doc;
        std::set<std::string> checked;
        for (const auto& doc : plan.skipped) by_doc[doc.name] = workspace.last_diagnostics(r.user, r.activity, doc.name);

        if (plan.to_check.empty()) {
            r.status = CheckStatus::unchanged;
            r.message = "no changes";
            fill(by_doc);
            return r.diagnostics();
        }
        if (!gateway) throw Error(ErrorCode::prover_unavailable, "no prover configured");

        workspace.materialize(r.user, r.activity, job.docs);
        std::vector<std::string> theories;
        for (const auto& doc : plan.to_check) {
            theories.push_back(doc.name);
            checked.insert(doc.name);
            by_doc[doc.name];
        }
        const auto master = workspace.master_dir(r.user, r.activity);
        const auto id = r.id;
        const auto user = r.user;
        auto outcome = gateway->check(r.user, theories, master, [&](const protocol::ProgressNote& note) {
            channel.publish(user, {{"type", "progress"}, {"check_id", id}, {"stage", "prover"}, {"message", note.text}});
        });
        prover_wait = outcome.prover_wait;

        for (const auto& m : outcome.task.messages) {
            auto target = std::find_if(plan.to_check.begin(), plan.to_check.end(),
                                       [&](const TheoryDocument& d) { return names_theory(m.theory_name, d.name); });
            const std::string& name = target != plan.to_check.end() ? target->name : plan.to_check.front().name;
            by_doc[name].push_back(from_prover(m));
        }
        fill(by_doc);
        for (auto& d : r.documents) d.checked = checked.contains(d.name);

        if (outcome.task.verdict == protocol::Verdict::failed) {
            r.status = CheckStatus::failed;
            r.message = outcome.task.failure_message();
            return r.diagnostics();
        }
        for (const auto& doc : plan.to_check) workspace.mark_checked(r.user, r.activity, doc.name, doc.content_hash, by_doc[doc.name]);
        const auto all = r.diagnostics();
        r.status = has_errors(all) ? CheckStatus::errors : CheckStatus::ok;
        r.message = r.status == CheckStatus::ok ? "checked" : "the prover reported errors";
        return all;
    }

    Workspace& workspace;
    telemetry::EventStore& events;
    ChannelHub& channel;
    ProverGateway* gateway;
    RulesetLookup rulesets;
    CheckServiceOptions options;

    std::mutex db_mutex;
    sql::Database db;

    mutable std::mutex mutex;
    std::condition_variable cv;
    std::condition_variable idle_cv;
    bool stopping = false;
    std::size_t pending = 0;
    std::map<UserId, Strand> strands;
    std::map<CheckId, CheckResult> live;
    std::map<CheckId, CheckResult> recent;
    std::deque<CheckId> recent_order;
    std::deque<RequestTiming> timings;

    asio::thread_pool pool;
    std::thread maintenance;
};

CheckService::CheckService(Workspace& workspace, telemetry::EventStore& events, ChannelHub& channel,
                           ProverGateway* gateway, RulesetLookup rulesets, CheckServiceOptions options)
    : impl_(std::make_unique<Impl>(workspace, events, channel, gateway, std::move(rulesets), options)) {}

CheckService::~CheckService() = default;

CheckId CheckService::submit_check(const User& user, const ActivityId& activity, const std::vector<std::string>& names,
                                   bool lint_enabled) {
    const auto accepted = SteadyClock::now();
    if (names.empty()) throw Error(ErrorCode::invalid_argument, "no theories to check");
    auto job = std::make_shared<Impl::Job>();
    std::set<std::string> seen;
    for (const auto& name : names) {
        if (!seen.insert(name).second) continue;
        auto doc = impl_->workspace.load_theory(user.id, activity, name);
        if (!doc) throw Error(ErrorCode::not_found, "no theory " + name + " in activity " + activity.str());
        job->docs.push_back(std::move(*doc));
    }
    for (const auto& doc : job->docs) {
        if (!job->snapshot.empty()) job->snapshot += '\n';
        job->snapshot += doc.content;
    }
    if (job->snapshot.empty()) job->snapshot = "\n";  // an empty document is still a snapshot

    CheckResult& r = job->record;
    r.id = CheckId(random_hex(16));
    r.user = user.id;
    r.activity = activity;
    for (const auto& doc : job->docs) r.names.push_back(doc.name);
    r.submitted = now_ms();
    job->lint_enabled = lint_enabled;
    job->accepted = accepted;

    // Durable snapshot before anything else can happen to this check.
    impl_->record(*job, telemetry::EventKind::check_submitted, {});
    impl_->persist(r);
    job->submit_cost = since(accepted);

    std::lock_guard lock(impl_->mutex);
    impl_->live[r.id] = r;
    ++impl_->pending;
    impl_->channel.publish(user.id, {{"type", "accepted"}, {"check_id", r.id}, {"names", r.names}});
    asio::post(impl_->strand_for(user.id), [impl = impl_.get(), job] { impl->run(*job); });
    return r.id;
}

std::optional<CheckResult> CheckService::result(const CheckId& id) const {
    {
        std::lock_guard lock(impl_->mutex);
        if (auto it = impl_->recent.find(id); it != impl_->recent.end()) return it->second;
        if (auto it = impl_->live.find(id); it != impl_->live.end()) return it->second;
    }
    std::lock_guard lock(impl_->db_mutex);
    auto st = impl_->db.prepare("SELECT result FROM checks WHERE id = ?1");
    st.bind(1, id.str());
    if (!st.step()) return std::nullopt;
    auto r = json::parse(st.column_text(0)).get<CheckResult>();
    if (r.completed && now_ms() - *r.completed > impl_->options.result_retention) return std::nullopt;
    return r;
}

void CheckService::drain() {
    std::unique_lock lock(impl_->mutex);
    impl_->idle_cv.wait(lock, [&] { return impl_->pending == 0; });
}

std::vector<RequestTiming> CheckService::timings() const {
    std::lock_guard lock(impl_->mutex);
    return {impl_->timings.begin(), impl_->timings.end()};
}

std::size_t CheckService::pending() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->pending;
}

}  // namespace prooflab::workspace
