#include "prooflab/web/server.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <thread>

using namespace prooflab;
using namespace std::chrono_literals;

namespace {

std::string theory(const std::string& name, const std::string& body = "lemma \"A \\<Longrightarrow> A\" by assumption") {
    return "theory " + name + "\n  imports Main\nbegin\n" + body + "\nend\n";
}

struct Server {
    testing::TempDir dir;
    std::unique_ptr<web::Application> app;
    std::unique_ptr<web::HttpServer> http;
    std::unique_ptr<httplib::Client> client;

    Server() {
        // Work on a copy: activity updates are written back to disk.
        std::filesystem::copy(PROOFLAB_CONFIG_DIR, dir / "config", std::filesystem::copy_options::recursive);
        web::AppOptions opts;
        opts.data_dir = dir / "data";
        opts.config_dir = dir / "config";
        opts.worker_threads = 4;
        app = std::make_unique<web::Application>(opts);
        http = std::make_unique<web::HttpServer>(*app);
        const auto port = http->start(0);
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(30, 0);
    }

    std::string login(const std::string& name, const std::string& pw) {
        const auto res = client->Post("/login", json{{"name", name}, {"password", pw}}.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        return json::parse(res->body).at("token");
    }

    static httplib::Headers auth(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

    httplib::Result get(const std::string& path, const std::string& token) { return client->Get(path, auth(token)); }
    httplib::Result post(const std::string& path, const std::string& token, const json& body) {
        return client->Post(path, auth(token), body.dump(), "application/json");
    }
    httplib::Result put(const std::string& path, const std::string& token, const json& body) {
        return client->Put(path, auth(token), body.dump(), "application/json");
    }

    json wait_result(const std::string& token, const std::string& id) {
        for (int i = 0; i < 500; ++i) {
            const auto res = get("/check/" + id, token);
            REQUIRE(res);
            const json j = json::parse(res->body);
            if (j.at("status") != "queued" && j.at("status") != "running") return j;
            std::this_thread::sleep_for(10ms);
        }
        FAIL("check did not finish");
        return {};
    }
};

}  // namespace

TEST_CASE("authentication and error mapping") {
    Server s;
    auto res = s.client->Get("/theories");
    REQUIRE(res);
    CHECK(res->status == 401);
    CHECK(json::parse(res->body)["error"] == "unauthorized");

    res = s.client->Post("/login", R"({"name":"alice","password":"wrong"})", "application/json");
    CHECK(res->status == 401);
    res = s.client->Post("/login", "not json", "application/json");
    CHECK(res->status == 400);

    const auto alice = s.login("alice", "alice-pw");
    res = s.get("/me", alice);
    CHECK(json::parse(res->body)["name"] == "alice");
    CHECK(s.get("/theories/demo/Nope", alice)->status == 404);
    CHECK(s.get("/theories?user=bob", alice)->status == 403);
    CHECK(s.put("/theories/demo/bad%20name", alice, {{"content", "x"}})->status == 400);
    CHECK(s.put("/theories/demo/Big", alice, {{"content", theory("Big", std::string(2 << 20, ' '))}})->status == 413);
    CHECK(s.get("/analytics/rank", alice)->status == 403);

    const auto guest = json::parse(s.client->Post("/guest")->body);
    CHECK(guest["user"]["role"] == "guest");
    CHECK(s.get("/me?token=" + guest["token"].get<std::string>(), "")->status == 200);

    CHECK(s.client->Post("/logout", Server::auth(alice), "", "application/json")->status == 204);
    CHECK(s.get("/me", alice)->status == 401);
}

TEST_CASE("theory storage over http") {
    Server s;
    const auto t = s.login("alice", "alice-pw");
    auto res = s.put("/theories/demo/T", t, {{"content", theory("T")}});
    REQUIRE(res->status == 200);
    CHECK(json::parse(res->body)["version"] == 1);
    CHECK_FALSE(json::parse(res->body).contains("content"));
    res = s.client->Put("/theories/demo/T", Server::auth(t), theory("T", "(* v2 *)"), "text/plain");
    CHECK(json::parse(res->body)["version"] == 2);
    CHECK(json::parse(s.get("/theories/demo/T", t)->body)["content"] == theory("T", "(* v2 *)"));
    CHECK(json::parse(s.get("/theories/demo/T/history", t)->body)["versions"].size() == 2);
    CHECK(json::parse(s.get("/theories/demo/T/versions/1", t)->body)["content"] == theory("T"));
    CHECK(json::parse(s.get("/theories", t)->body)["theories"].size() == 1);

    const auto tar = s.get("/archive/demo", t)->body;
    const auto bob = s.login("bob", "bob-pw");
    res = s.client->Put("/archive/demo", Server::auth(bob), tar, "application/x-tar");
    CHECK(json::parse(res->body)["imported"] == json{"T"});

    const auto teacher = s.login("instructor", "change-me");
    CHECK(s.get("/theories/demo/T?user=alice", teacher)->status == 200);
    CHECK(s.client->Delete("/theories/demo/T", Server::auth(t))->status == 204);
    CHECK(s.client->Delete("/theories/demo/T", Server::auth(t))->status == 404);
}

TEST_CASE("lint endpoint") {
    Server s;
    const auto t = s.login("alice", "alice-pw");
    const std::string text = theory("L", "lemma \"x\"\n  apply (auto\n  done");
    auto res = s.post("/lint", t, {{"content", text}, {"activity", "demo"}});
    REQUIRE(res->status == 200);
    const json j = json::parse(res->body);
    CHECK(j["structure"].size() == 1);
    REQUIRE(j["lint"].size() == 1);
    CHECK(j["lint"][0]["rule_id"] == "no-automation/auto");
    CHECK(j["diagnostics"].size() == 2);
    res = s.post("/lint", t, {{"content", text}, {"activity", "demo"}, {"linter", false}});
    CHECK(json::parse(res->body)["lint"].empty());
    CHECK(s.post("/lint", t, {{"content", text}, {"activity", "nope"}})->status == 404);
}

TEST_CASE("checks, results and the realtime channel") {
    Server s;
    const auto t = s.login("alice", "alice-pw");
    s.put("/theories/demo/C", t, {{"content", theory("C", "lemma \"x\" sorry")}});
    auto res = s.post("/check", t, {{"activity", "demo"}, {"names", {"C"}}});
    REQUIRE(res->status == 202);
    const std::string id = json::parse(res->body)["check_id"];
    CHECK(res->get_header_value("Location") == "/check/" + id);
    const json result = s.wait_result(t, id);
    CHECK(result["status"] == "errors");
    CHECK(result["documents"][0]["diagnostics"][0]["message"] == "unfinished proof");

    const auto bob = s.login("bob", "bob-pw");
    CHECK(s.get("/check/" + id, bob)->status == 403);
    CHECK(s.get("/check/nope", t)->status == 404);
    CHECK(s.post("/check", t, {{"activity", "demo"}, {"names", {"Missing"}}})->status == 404);

    // Long-poll picks up the whole sequence; bob sees none of it.
    res = s.get("/events?after=0", t);
    const json events = json::parse(res->body);
    REQUIRE(events["messages"].size() >= 3);
    CHECK(events["messages"][0]["seq"] == 1);
    CHECK(events["messages"][0]["message"]["type"] == "accepted");
    CHECK(events["messages"].back()["message"]["type"] == "result");
    CHECK(events["messages"].back()["message"]["result"] == result);
    CHECK(json::parse(s.get("/events?after=0", bob)->body)["messages"].empty());

    // A waiting poll returns as soon as something is published.
    const std::uint64_t last = events["last_seq"];
    std::thread pinger([&] {
        std::this_thread::sleep_for(100ms);
        httplib::Client c("127.0.0.1", s.http->port());
        c.Post("/events", Server::auth(t), R"({"type":"ping","data":7})", "application/json");
    });
    res = s.get("/events?after=" + std::to_string(last) + "&wait=10000", t);
    pinger.join();
    const json woke = json::parse(res->body);
    REQUIRE(woke["messages"].size() == 1);
    CHECK(woke["messages"][0]["message"] == json{{"type", "pong"}, {"data", 7}});
    CHECK(s.post("/events", t, {{"type", "nonsense"}})->status == 400);

    // Upstream check submission.
    res = s.post("/events", t, {{"type", "check"}, {"activity", "demo"}, {"names", {"C"}}});
    CHECK(res->status == 202);
    CHECK(s.wait_result(t, json::parse(res->body)["check_id"])["status"] == "unchanged");

    // Server-sent events replay from Last-Event-ID.
    std::string stream;
    httplib::Client sse("127.0.0.1", s.http->port());
    httplib::Headers h = Server::auth(t);
    h.emplace("Last-Event-ID", "1");
    sse.Get("/events/stream", h, [&](const char* data, std::size_t n) {
        stream.append(data, n);
        return stream.find("\"type\":\"pong\"") == std::string::npos;
    });
    CHECK(stream.find("id: 1\n") == std::string::npos);
    CHECK(stream.find("id: 2\n") != std::string::npos);
    CHECK(stream.find("event: message\ndata: ") != std::string::npos);
}

TEST_CASE("activities, telemetry export and analytics") {
    Server s;
    const auto t = s.login("alice", "alice-pw");
    const auto teacher = s.login("instructor", "change-me");
    auto res = s.get("/activities", t);
    REQUIRE(res->status == 200);
    CHECK(json::parse(res->body)["activities"][0]["id"] == "demo");
    CHECK(s.get("/activities/nope", t)->status == 404);

    json config = json::parse(s.get("/activities/demo", t)->body);
    config["id"] = "demo2";
    config["linter"]["enforce"] = true;
    config["linter"]["rules"][0]["severity"] = "error";
    CHECK(s.post("/activities", t, config)->status == 403);
    CHECK(s.post("/activities", teacher, config)->status == 201);
    CHECK(s.post("/activities", teacher, config)->status == 200);
    CHECK(std::filesystem::exists(s.dir / "config" / "activities" / "demo2.json"));
    config["linter"]["rules"][0]["pattern"] = "(";
    CHECK(s.post("/activities", teacher, config)->status == 400);

    // Enforced linter rejects automation.
    s.put("/theories/demo2/E", t, {{"content", theory("E", "lemma \"x\" by metis")}});
    res = s.post("/check", t, {{"activity", "demo2"}, {"names", {"E"}}});
    CHECK(s.wait_result(t, json::parse(res->body)["check_id"])["status"] == "lint-rejected");

    s.put("/theories/demo/Ex1_X", t, {{"content", theory("Ex1_X", "lemma \"A\" by simp")}});
    res = s.post("/check", t, {{"activity", "demo"}, {"names", {"Ex1_X"}}});
    s.wait_result(t, json::parse(res->body)["check_id"]);

    CHECK(s.get("/export", t)->status == 403);
    const std::string exported = s.get("/export", teacher)->body;
    CHECK(exported.starts_with("{\"schema\":\"prooflab-telemetry\""));
    CHECK(s.get("/export?kind=check-submitted&user=alice", teacher)->status == 200);

    res = s.get("/analytics/rank?activity=demo", teacher);
    REQUIRE(res->status == 200);
    const json rank = json::parse(res->body);
    CHECK(rank["measure"] == "rank");
    CHECK(rank.dump().find("semantic") != std::string::npos);
    CHECK(s.get("/analytics/freq?user=alice", teacher)->status == 200);
    CHECK(s.get("/analytics/bogus", teacher)->status == 404);
    CHECK(s.get("/analytics/rank?group_by=x", teacher)->status == 400);

    // Importing into a second server reproduces the analysis.
    Server other;
    const auto teacher2 = other.login("instructor", "change-me");
    res = other.client->Post("/import", Server::auth(teacher2), exported, "application/x-ndjson");
    REQUIRE(res->status == 200);
    CHECK(json::parse(other.get("/analytics/rank?activity=demo", teacher2)->body) == rank);

    const json metrics = json::parse(s.client->Get("/metrics")->body);
    CHECK(metrics["server_handling_ms"]["count"] >= 2);
    CHECK(metrics["active_users"] >= 2);
    CHECK(metrics["memory"]["current_rss_bytes"] > 0);
}
