#include "criteria.hpp"

#include "prooflab/web/server.hpp"
#include "test_support.hpp"

#include <httplib.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace prooflab::acceptance {

namespace {

using namespace std::chrono_literals;
namespace fs = std::filesystem;

constexpr auto kDeadline = 120s;

httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

std::string scratch(const std::string& name, const std::string& user, int i) {
    std::string body = "theory " + name + "\n  imports Main\nbegin\n\n(* " + user + " attempt " + std::to_string(i) +
                       " *)\nlemma l" + std::to_string(i) + ": \"A \\<and> B \\<Longrightarrow> B \\<and> A\"\n";
    // Every third attempt is unfinished so results differ between checks.
    body += i % 3 == 2 ? "  sorry\n" : "  by (erule conjE) (rule conjI)\n";
    return body + "\nend\n";
}

/// A config directory holding the shipped activities and categories plus a
/// generated user list.
fs::path make_config(const testing::TempDir& dir, const std::vector<std::string>& students) {
    const fs::path config = dir / "config";
    fs::create_directories(config);
    fs::copy(fs::path(PROOFLAB_CONFIG_DIR) / "activities", config / "activities", fs::copy_options::recursive);
    fs::copy_file(fs::path(PROOFLAB_CONFIG_DIR) / "categories.json", config / "categories.json");
    json users = json::array({{{"name", "teacher"}, {"password", "teacher-pw"}, {"role", "instructor"}}});
    for (const auto& s : students) users.push_back({{"name", s}, {"password", s + "-pw"}, {"role", "student"}});
    testing::write_file(config / "users.json", json{{"users", users}}.dump(2));
    return config;
}

std::string login(httplib::Client& c, const std::string& name) {
    const auto res = c.Post("/login", json{{"name", name}, {"password", name + "-pw"}}.dump(), "application/json");
    if (!res || res->status != 200) throw std::runtime_error("login failed for " + name);
    return json::parse(res->body).at("token");
}

json get_json(httplib::Client& c, const std::string& path, const std::string& token) {
    const auto res = c.Get(path, bearer(token));
    if (!res) throw std::runtime_error("GET " + path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw std::runtime_error("GET " + path + " -> " + std::to_string(res->status) + " " + res->body);
    return json::parse(res->body);
}

std::unique_ptr<httplib::Client> client_for(std::uint16_t port) {
    auto c = std::make_unique<httplib::Client>("127.0.0.1", port);
    c->set_read_timeout(60, 0);
    c->set_connection_timeout(5, 0);
    return c;
}

/// Waits on the caller's channel for the result of one check. Collects every
/// message seen into `seen`.
json await_result(httplib::Client& c, const std::string& token, const std::string& check_id, std::uint64_t& cursor,
                  std::vector<json>& seen) {
    const auto deadline = std::chrono::steady_clock::now() + kDeadline;
    while (std::chrono::steady_clock::now() < deadline) {
        const json batch = get_json(c, "/events?after=" + std::to_string(cursor) + "&wait=5000", token);
        for (const auto& m : batch.at("messages")) {
            cursor = m.at("seq");
            seen.push_back(m.at("message"));
            const auto& body = seen.back();
            if (body.value("type", "") == "result" && body.value("check_id", "") == check_id) return body.at("result");
        }
    }
    throw std::runtime_error("no result for " + check_id);
}

Verdict end_to_end_isolation() {
    constexpr int kUsers = 12, kChecks = 10;
    std::vector<std::string> names;
    for (int u = 1; u <= kUsers; ++u) names.push_back("student" + std::string(u < 10 ? "0" : "") + std::to_string(u));
    testing::TempDir dir;
    web::AppOptions opts;
    opts.data_dir = dir / "data";
    opts.config_dir = make_config(dir, names);
    opts.mock_latency = 50ms;
    web::Application app(opts);
    web::HttpServer http(app);
    const auto port = http.start(0);

    struct PerUser {
        std::set<std::string> submitted;
        std::set<std::string> results;
        std::vector<json> seen;
        std::vector<std::string> statuses;
        std::chrono::milliseconds max_post{0};
        std::string error;
    };
    std::vector<PerUser> per(kUsers);
    std::vector<std::thread> threads;
    for (int u = 0; u < kUsers; ++u) {
        threads.emplace_back([&, u] {
            auto& me = per[u];
            try {
                auto c = client_for(port);
                const std::string token = login(*c, names[u]);
                std::uint64_t cursor = 0;
                for (int i = 0; i < kChecks; ++i) {
                    const auto put = c->Put("/theories/demo/Scratch", bearer(token),
                                            json{{"content", scratch("Scratch", names[u], i)}}.dump(), "application/json");
                    if (!put || put->status != 200) throw std::runtime_error("save failed");
                    const auto t0 = std::chrono::steady_clock::now();
                    const auto post = c->Post("/check", bearer(token),
                                              json{{"activity", "demo"}, {"names", {"Scratch"}}}.dump(), "application/json");
                    me.max_post = std::max(me.max_post, std::chrono::duration_cast<std::chrono::milliseconds>(
                                                            std::chrono::steady_clock::now() - t0));
                    if (!post || post->status != 202) throw std::runtime_error("check not accepted");
                    const std::string id = json::parse(post->body).at("check_id");
                    me.submitted.insert(id);
                    const json result = await_result(*c, token, id, cursor, me.seen);
                    me.statuses.push_back(result.at("status"));
                }
            } catch (const std::exception& e) {
                me.error = e.what();
            }
        });
    }
    for (auto& t : threads) t.join();
    app.checks().drain();

    std::ostringstream detail;
    for (int u = 0; u < kUsers; ++u) {
        if (!per[u].error.empty()) return {false, names[u] + ": " + per[u].error};
    }

    // (a) one prover session per user, each with its own master directory.
    const auto sessions = app.gateway()->sessions();
    std::set<std::string> session_ids;
    for (const auto& [user, id] : sessions) session_ids.insert(id.str());
    const auto stats = app.embedded_mock()->stats();
    std::set<std::string> master_dirs;
    bool one_dir_each = true;
    for (const auto& [id, rec] : stats.sessions) {
        one_dir_each = one_dir_each && rec.master_dirs.size() == 1;
        master_dirs.insert(rec.master_dirs.begin(), rec.master_dirs.end());
    }
    const bool sessions_ok = sessions.size() == kUsers && session_ids.size() == kUsers &&
                             stats.sessions.size() == kUsers && one_dir_each && master_dirs.size() == kUsers;
    detail << "(a) " << session_ids.size() << " distinct sessions, " << master_dirs.size() << " master dirs; ";

    // (b) every channel carries exactly its owner's results.
    std::size_t foreign = 0, results = 0, non_prover = 0;
    for (int u = 0; u < kUsers; ++u) {
        for (const auto& m : per[u].seen) {
            if (m.contains("check_id") && !per[u].submitted.count(m.at("check_id"))) ++foreign;
            if (m.value("type", "") == "result") {
                ++results;
                per[u].results.insert(m.at("check_id").get<std::string>());
                if (m.at("result").at("user") != names[u]) ++foreign;
            }
        }
        for (const auto& s : per[u].statuses) non_prover += s != "ok" && s != "errors";
    }
    bool all_results = true;
    for (const auto& p : per) all_results = all_results && p.results == p.submitted && p.submitted.size() == kChecks;
    const bool isolation_ok = foreign == 0 && all_results && results == kUsers * kChecks && non_prover == 0;
    detail << "(b) " << results << " results, " << foreign << " foreign messages; ";

    // (c) telemetry holds one non-empty snapshot per submission.
    telemetry::EventFilter submitted;
    submitted.kind = telemetry::EventKind::check_submitted;
    const auto events = app.events().query(submitted);
    std::map<std::string, int> per_user;
    bool snapshots_ok = true;
    for (const auto& e : events) {
        ++per_user[e.user.str()];
        snapshots_ok = snapshots_ok && !e.theory_snapshot.empty() &&
                       e.theory_snapshot.find("(* " + e.user.str() + " attempt") != std::string::npos;
    }
    bool spread_ok = per_user.size() == kUsers;
    for (const auto& [u, n] : per_user) spread_ok = spread_ok && n == kChecks;
    const bool telemetry_ok = events.size() == kUsers * kChecks && snapshots_ok && spread_ok;
    detail << "(c) " << events.size() << " check-submitted events; ";

    // (d) server-side handling per request.
    const auto timings = app.checks().timings();
    std::chrono::milliseconds max_handling{0}, max_post{0};
    for (const auto& t : timings) max_handling = std::max(max_handling, t.server_handling);
    for (const auto& p : per) max_post = std::max(max_post, p.max_post);
    const bool timing_ok = timings.size() == kUsers * kChecks && max_handling <= 1000ms;
    detail << "(d) max server_handling " << max_handling.count() << " ms over " << timings.size()
           << " requests (limit 1000 ms), max POST /check " << max_post.count() << " ms";
    http.stop();
    return {sessions_ok && isolation_ok && telemetry_ok && timing_ok, detail.str()};
}

Verdict incremental_checking() {
    testing::TempDir dir;
    web::AppOptions opts;
    opts.data_dir = dir / "data";
    opts.config_dir = make_config(dir, {"inc"});
    web::Application app(opts);
    web::HttpServer http(app);
    auto c = client_for(http.start(0));
    const std::string token = login(*c, "inc");
    const std::vector<std::string> names = {"Ex1_Base", "Ex2_Mid", "Ex3_Top"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        c->Put("/theories/demo/" + names[i], bearer(token), json{{"content", scratch(names[i], "inc", int(i))}}.dump(),
               "application/json");
    }
    std::uint64_t cursor = 0;
    std::vector<json> seen;
    auto run = [&] {
        const auto res = c->Post("/check", bearer(token), json{{"activity", "demo"}, {"names", names}}.dump(),
                                 "application/json");
        if (!res || res->status != 202) throw std::runtime_error("check not accepted");
        return await_result(*c, token, json::parse(res->body).at("check_id"), cursor, seen);
    };
    auto* mock = app.embedded_mock();
    const json first = run();
    const auto first_checked = mock->stats().theories_checked;

    mock->reset_counters();
    const json again = run();
    const auto resubmit = mock->stats();

    // Control: one edit sends exactly that theory.
    c->Put("/theories/demo/Ex2_Mid", bearer(token), json{{"content", scratch("Ex2_Mid", "inc", 7)}}.dump(),
           "application/json");
    mock->reset_counters();
    const json edited = run();
    const auto control = mock->stats();
    http.stop();

    std::ostringstream detail;
    detail << "first check sent " << first_checked << " theories (" << first.at("status").get<std::string>()
           << "); unchanged resubmission: " << resubmit.use_theories_calls << " use_theories calls, "
           << resubmit.theories_checked << " theories, status " << again.at("status").get<std::string>()
           << "; after one edit: " << control.theories_checked << " theory";
    const bool pass = first_checked == 3 && resubmit.use_theories_calls == 0 && resubmit.theories_checked == 0 &&
                      again.at("status") == "unchanged" && again.at("documents").size() == 3 &&
                      control.theories_checked == 1 && edited.at("status") != "unchanged";
    return {pass, detail.str()};
}

std::string run_command(const std::string& command) {
    std::string out;
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) throw std::runtime_error("cannot run " + command);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = ::pclose(pipe);
    if (status != 0) throw std::runtime_error(command + " exited with " + std::to_string(status));
    return out;
}

Verdict analytics_equivalence() {
    using namespace analytics;
    // Part 1: every measure against the brute-force oracles.
    std::size_t comparisons = 0, ratios = 0;
    const auto specs = testing::synthetic_exercises();
    for (std::uint64_t seed : {200, 201, 202, 203, 204}) {
        const auto log = testing::synthetic_log(seed, 200);
        if (log.size() != 200) return {false, "synthetic log has " + std::to_string(log.size()) + " events"};
        for (auto g : {GroupBy::all, GroupBy::user, GroupBy::activity}) {
            if (rank_mistakes(log, g, CategoryTable::defaults(), specs) != testing::rank_oracle(log, g, specs) ||
                rank_mistakes(log, g) != testing::rank_oracle(log, g, {})) {
                return {false, "rank_mistakes differs from the oracle (seed " + std::to_string(seed) + ")"};
            }
            comparisons += 2;
        }
        const auto assoc = message_mistake_association(log);
        if (!(assoc == testing::assoc_oracle(log))) return {false, "association differs (seed " + std::to_string(seed) + ")"};
        ++comparisons;
        for (const auto& row : assoc.rows) {
            if (row.ratio < 0.0 || row.ratio > 1.0) return {false, "association ratio outside [0,1]"};
            ++ratios;
        }
        for (const char* u : {"ann", "ben", "cho", "dev", "eli"}) {
            for (auto idle : {0min, 5min, 15min}) {
                if (!(check_frequency(log, UserId(u), idle) == testing::freq_oracle(log, UserId(u), idle))) {
                    return {false, std::string("check_frequency differs for ") + u};
                }
                if (exercise_durations(log, UserId(u), specs, idle) != testing::durations_oracle(log, UserId(u), specs, idle) ||
                    exercise_durations(log, UserId(u), {}, idle) != testing::durations_oracle(log, UserId(u), {}, idle)) {
                    return {false, std::string("exercise_durations differs for ") + u};
                }
                comparisons += 3;
            }
        }
    }

    // Part 2: CLI over an export file against the API over the live store.
    testing::TempDir dir;
    web::AppOptions opts;
    opts.data_dir = dir / "data";
    opts.config_dir = make_config(dir, {"ann"});
    web::Application app(opts);
    web::HttpServer http(app);
    auto c = client_for(http.start(0));
    const std::string teacher = login(*c, "teacher");
    std::ostringstream seeded;
    telemetry::write_export(seeded, testing::synthetic_log(200, 200));
    auto res = c->Post("/import", bearer(teacher), seeded.str(), "application/x-ndjson");
    if (!res || res->status != 200) return {false, "import into the live store failed"};
    // A few live checks on top of the imported history.
    const std::string ann = login(*c, "ann");
    std::uint64_t cursor = 0;
    std::vector<json> seen;
    for (int i = 0; i < 3; ++i) {
        c->Put("/theories/demo/Ex1_Comm", bearer(ann), json{{"content", scratch("Ex1_Comm", "ann", i)}}.dump(),
               "application/json");
        res = c->Post("/check", bearer(ann), json{{"activity", "demo"}, {"names", {"Ex1_Comm"}}}.dump(),
                      "application/json");
        await_result(*c, ann, json::parse(res->body).at("check_id"), cursor, seen);
    }
    const fs::path export_file = dir / "export.ndjson";
    res = c->Get("/export", bearer(teacher));
    testing::write_file(export_file, res->body);

    const fs::path config = opts.config_dir;
    const std::string base = std::string(PROOFLAB_ANALYZE_BIN) + " " + export_file.string() + " ";
    const std::string common = " --format json --categories " + (config / "categories.json").string();
    const std::string demo_cfg = " --activity demo --config " + (config / "activities" / "demo.json").string();
    const std::vector<std::pair<std::string, std::string>> variants = {
        {"rank", "/analytics/rank"},
        {"rank --group-by user", "/analytics/rank?group_by=user"},
        {"rank --group-by activity", "/analytics/rank?group_by=activity"},
        {"rank" + demo_cfg, "/analytics/rank?activity=demo"},
        {"assoc", "/analytics/assoc"},
        {"freq", "/analytics/freq"},
        {"freq --user ann --idle-threshold 5", "/analytics/freq?user=ann&idle_threshold=5"},
        {"durations" + demo_cfg, "/analytics/durations?activity=demo"},
        {"durations --idle-threshold 0", "/analytics/durations?idle_threshold=0"},
    };
    std::size_t agreeing = 0;
    for (const auto& [args, path] : variants) {
        const json cli = json::parse(run_command(base + args + common));
        const json api = get_json(*c, path, teacher);
        if (cli != api) {
            http.stop();
            return {false, "CLI '" + args + "' differs from GET " + path};
        }
        ++agreeing;
    }
    http.stop();
    return {true, std::to_string(comparisons) + " measure/oracle comparisons on 200-event logs identical, " +
                      std::to_string(ratios) + " association ratios in [0,1]; " + std::to_string(agreeing) +
                      " CLI-over-export queries equal API-over-live-store"};
}

/// The server binary as a child process.
class ServerProcess {
public:
    ServerProcess(const fs::path& data_dir, const fs::path& config_dir) {
        int fds[2];
        if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
        pid_ = ::fork();
        if (pid_ < 0) throw std::runtime_error("fork failed");
        if (pid_ == 0) {
            ::dup2(fds[1], STDOUT_FILENO);
            ::close(fds[0]);
            ::close(fds[1]);
            const std::string data = data_dir.string(), config = config_dir.string();
            ::execl(PROOFLAB_SERVER_BIN, PROOFLAB_SERVER_BIN, "--port", "0", "--data-dir", data.c_str(), "--config-dir",
                    config.c_str(), "--prover", "mock", "--mock-latency", "20", "--workers", "4", nullptr);
            ::_exit(127);
        }
        ::close(fds[1]);
        out_ = ::fdopen(fds[0], "r");
        char line[256];
        if (!std::fgets(line, sizeof line, out_)) throw std::runtime_error("server exited before listening");
        const std::string text(line);
        const auto colon = text.rfind(':');
        if (text.rfind("listening on http://", 0) != 0 || colon == std::string::npos) {
            throw std::runtime_error("unexpected server output: " + text);
        }
        port_ = static_cast<std::uint16_t>(std::stoi(text.substr(colon + 1)));
    }
    ~ServerProcess() {
        if (pid_ > 0) stop(SIGTERM);
        if (out_) std::fclose(out_);
    }

    std::uint16_t port() const { return port_; }
    void stop(int sig) {
        ::kill(pid_, sig);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }

private:
    pid_t pid_ = -1;
    FILE* out_ = nullptr;
    std::uint16_t port_ = 0;
};

Verdict telemetry_durability() {
    const std::vector<std::string> students = {"d1", "d2", "d3", "d4", "d5", "d6"};
    testing::TempDir dir;
    const fs::path config = make_config(dir, students);
    const fs::path data = dir / "data";

    struct AckedSave {
        std::string user, name, content;
        std::int64_t version;
    };
    struct AckedCheck {
        std::string user, id, snapshot;
    };
    std::mutex mutex;
    std::vector<AckedSave> saves;
    std::vector<AckedCheck> checks;
    std::atomic<bool> stop{false};
    std::atomic<std::size_t> acked_checks{0};

    auto server = std::make_unique<ServerProcess>(data, config);
    const auto port = server->port();
    std::vector<std::thread> threads;
    for (const auto& user : students) {
        threads.emplace_back([&, user] {
            auto c = client_for(port);
            c->set_read_timeout(5, 0);
            std::string token;
            try {
                token = login(*c, user);
            } catch (...) {
                return;
            }
            for (int i = 0; !stop; ++i) {
                const std::string name = "Burst" + std::to_string(i % 3);
                const std::string content = scratch(name, user, i);
                const auto put = c->Put("/theories/demo/" + name, bearer(token), json{{"content", content}}.dump(),
                                        "application/json");
                if (!put) break;
                if (put->status != 200) continue;
                {
                    std::lock_guard lock(mutex);
                    saves.push_back({user, name, content, json::parse(put->body).at("version")});
                }
                const auto post = c->Post("/check", bearer(token), json{{"activity", "demo"}, {"names", {name}}}.dump(),
                                          "application/json");
                if (!post) break;
                if (post->status != 202) continue;
                std::lock_guard lock(mutex);
                checks.push_back({user, json::parse(post->body).at("check_id"), content});
                ++acked_checks;
            }
        });
    }
    const auto burst_deadline = std::chrono::steady_clock::now() + 30s;
    while (acked_checks < 150 && std::chrono::steady_clock::now() < burst_deadline) std::this_thread::sleep_for(10ms);
    // Kill while requests are still in flight.
    server->stop(SIGKILL);
    stop = true;
    for (auto& t : threads) t.join();
    server.reset();

    server = std::make_unique<ServerProcess>(data, config);
    auto c = client_for(server->port());
    std::map<std::string, std::string> tokens;
    for (const auto& u : students) tokens[u] = login(*c, u);
    const std::string teacher = login(*c, "teacher");

    std::size_t saves_ok = 0;
    for (const auto& s : saves) {
        const json v = get_json(*c, "/theories/demo/" + s.name + "/versions/" + std::to_string(s.version), tokens[s.user]);
        saves_ok += v.at("content") == s.content;
    }
    std::map<std::string, std::size_t> statuses;
    std::size_t results_ok = 0;
    for (const auto& k : checks) {
        json r = get_json(*c, "/check/" + k.id, tokens[k.user]);
        for (int i = 0; i < 500 && (r.at("status") == "queued" || r.at("status") == "running"); ++i) {
            std::this_thread::sleep_for(20ms);
            r = get_json(*c, "/check/" + k.id, tokens[k.user]);
        }
        ++statuses[r.at("status")];
        results_ok += r.at("user") == k.user && r.at("status") != "queued" && r.at("status") != "running";
    }

    // Every acknowledged check has its submission event with the exact snapshot.
    const auto exported = c->Get("/export", bearer(teacher));
    if (!exported || exported->status != 200) return {false, "export after restart failed"};
    std::istringstream in(exported->body);
    const auto events = telemetry::read_export(in);
    std::multiset<std::pair<std::string, std::string>> submitted;
    for (const auto& e : events) {
        if (e.kind == telemetry::EventKind::check_submitted) submitted.insert({e.user.str(), e.theory_snapshot});
    }
    std::size_t events_ok = 0;
    for (const auto& k : checks) events_ok += submitted.count({k.user, k.snapshot}) > 0;

    // Export, import into a fresh store, export again.
    telemetry::EventStore fresh(dir / "fresh.db");
    std::istringstream again(exported->body);
    fresh.import_events(again);
    std::ostringstream second;
    fresh.export_events(second, {}, Role::instructor);
    const bool identical = second.str() == exported->body;
    server.reset();

    std::ostringstream detail;
    detail << "killed after " << checks.size() << " acked checks and " << saves.size() << " acked saves; after restart "
           << saves_ok << "/" << saves.size() << " saves, " << events_ok << "/" << checks.size()
           << " submission events, " << results_ok << "/" << checks.size() << " final results (";
    for (const auto& [s, n] : statuses) detail << s << ' ' << n << ' ';
    detail << "); export/import/export " << (identical ? "byte-identical" : "DIFFERS") << " over " << events.size()
           << " events";
    const bool pass = !checks.empty() && saves_ok == saves.size() && events_ok == checks.size() &&
                      results_ok == checks.size() && identical;
    return {pass, detail.str()};
}

}  // namespace

std::vector<Criterion> server_criteria() {
    return {
        {"end-to-end-isolation", end_to_end_isolation},
        {"incremental-checking", incremental_checking},
        {"analytics-equivalence", analytics_equivalence},
        {"telemetry-durability", telemetry_durability},
    };
}

}  // namespace prooflab::acceptance
