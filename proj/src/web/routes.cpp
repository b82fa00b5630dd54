#include "prooflab/isar/structure.hpp"
#include "prooflab/web/server.hpp"

#include <httplib.h>

#include <sstream>

namespace prooflab::web {

namespace {

using httplib::Request;
using httplib::Response;
using workspace::User;

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::bad_credentials: return 401;
    case ErrorCode::permission_denied: return 403;
    case ErrorCode::not_found: return 404;
    case ErrorCode::name_invalid:
    case ErrorCode::invalid_argument:
    case ErrorCode::invalid_pattern: return 400;
    case ErrorCode::quota_exceeded: return 413;
    case ErrorCode::storage_full: return 507;
    case ErrorCode::prover_unavailable: return 503;
    default: return 500;
    }
}

void send_json(Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, int status, std::string_view code, const std::string& message) {
    send_json(res, {{"error", code}, {"message", message}}, status);
}

json parse_body(const Request& req) {
    if (req.body.empty()) return json::object();
    json body = json::parse(req.body);
    if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
    return body;
}

std::optional<std::string> query(const Request& req, const std::string& key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
}

std::string bearer_token(const Request& req) {
    const std::string header = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (header.starts_with(prefix)) return header.substr(prefix.size());
    return req.has_param("token") ? req.get_param_value("token") : std::string();
}

struct Unauthorized {};

}  // namespace

HttpServer::HttpServer(Application& app, std::string host)
    : app_(app), host_(std::move(host)), server_(std::make_unique<httplib::Server>()) {
    // Long-poll and stream subscribers each hold a worker.
    server_->new_task_queue = [] { return new httplib::ThreadPool(64); };
    install_routes();
}

HttpServer::~HttpServer() { stop(); }

std::uint16_t HttpServer::start(std::uint16_t port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host_) : (server_->bind_to_port(host_, port) ? port : -1);
    if (bound <= 0) throw Error(ErrorCode::bind_failure, "cannot bind " + host_ + ":" + std::to_string(port));
    port_ = static_cast<std::uint16_t>(bound);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void HttpServer::stop() {
    if (stopping_.exchange(true)) {
        if (thread_.joinable()) thread_.join();
        return;
    }
    server_->stop();
    if (thread_.joinable()) thread_.join();
}

void HttpServer::wait() {
    if (thread_.joinable()) thread_.join();
}

void HttpServer::install_routes() {
    using Handler = std::function<void(const Request&, Response&)>;
    auto guard = [](Handler h) {
        return [h = std::move(h)](const Request& req, Response& res) {
            try {
                h(req, res);
            } catch (const Unauthorized&) {
                send_error(res, 401, "unauthorized", "missing or invalid token");
            } catch (const Error& e) {
                send_error(res, http_status(e.code()), to_string(e.code()), e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, "invalid-argument", e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "internal-error", e.what());
            }
        };
    };
    auto authenticate = [this](const Request& req) {
        auto user = app_.workspace().authenticate(bearer_token(req));
        if (!user) throw Unauthorized{};
        app_.metrics().touch(user->id);
        return *user;
    };
    auto require_instructor = [](const User& u) {
        if (u.role != Role::instructor) throw Error(ErrorCode::permission_denied, "instructor role required");
    };
    // Whose theories a request addresses: the caller's own unless an instructor names another user.
    auto target_user = [](const Request& req, const User& caller) {
        const auto named = query(req, "user");
        if (!named || *named == caller.id.str()) return caller.id;
        if (caller.role != Role::instructor) {
            throw Error(ErrorCode::permission_denied, "cannot access another user's theories");
        }
        return UserId(*named);
    };
    auto& svr = *server_;
    Application& app = app_;

    svr.Get("/health", guard([&app](const Request&, Response& res) {
        send_json(res, {{"ok", true}, {"prover", app.gateway() != nullptr}});
    }));

    // -- authentication ---------------------------------------------------------
    svr.Post("/login", guard([&app](const Request& req, Response& res) {
        const json body = parse_body(req);
        const auto grant =
            app.workspace().login(body.at("name").get<std::string>(), body.at("password").get<std::string>());
        app.metrics().touch(grant.user.id);
        send_json(res, {{"token", grant.token}, {"user", grant.user}});
    }));
    svr.Post("/guest", guard([&app](const Request&, Response& res) {
        const auto grant = app.workspace().guest_login();
        app.metrics().touch(grant.user.id);
        send_json(res, {{"token", grant.token}, {"user", grant.user}});
    }));
    svr.Post("/logout", guard([&app, authenticate](const Request& req, Response& res) {
        authenticate(req);
        app.workspace().logout(bearer_token(req));
        res.status = 204;
    }));
    svr.Get("/me", guard([authenticate](const Request& req, Response& res) { send_json(res, authenticate(req)); }));

    // -- theories ---------------------------------------------------------------
    svr.Get("/theories", guard([&app, authenticate, target_user](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const UserId owner = target_user(req, caller);
        std::optional<ActivityId> activity;
        if (auto a = query(req, "activity")) activity = ActivityId(*a);
        json out = json::array();
        for (const auto& d : app.workspace().list_theories(owner, activity)) {
            json j = d;
            j.erase("content");
            out.push_back(std::move(j));
        }
        send_json(res, {{"theories", out}});
    }));
    svr.Get("/theories/:activity/:name", guard([&app, authenticate, target_user](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const UserId owner = target_user(req, caller);
        const auto doc = app.workspace().load_theory(owner, ActivityId(req.path_params.at("activity")),
                                                     req.path_params.at("name"));
        if (!doc) throw Error(ErrorCode::not_found, "no such theory");
        send_json(res, *doc);
    }));
    svr.Put("/theories/:activity/:name", guard([&app, authenticate, target_user](const Request& req, Response& res) {
        const User caller = authenticate(req);
        // Writing is always to one's own workspace.
        if (target_user(req, caller) != caller.id) {
            throw Error(ErrorCode::permission_denied, "cannot write another user's theories");
        }
        std::string content;
        if (req.get_header_value("Content-Type").starts_with("text/plain")) {
            content = req.body;
        } else {
            content = parse_body(req).at("content").get<std::string>();
        }
        const auto doc = app.workspace().save_theory(caller.id, ActivityId(req.path_params.at("activity")),
                                                     req.path_params.at("name"), content);
        json j = doc;
        j.erase("content");
        send_json(res, j);
    }));
    svr.Delete("/theories/:activity/:name", guard([&app, authenticate, target_user](const Request& req, Response& res) {
        const User caller = authenticate(req);
        if (target_user(req, caller) != caller.id) {
            throw Error(ErrorCode::permission_denied, "cannot delete another user's theories");
        }
        if (!app.workspace().delete_theory(caller.id, ActivityId(req.path_params.at("activity")),
                                           req.path_params.at("name"))) {
            throw Error(ErrorCode::not_found, "no such theory");
        }
        res.status = 204;
    }));
    svr.Get("/theories/:activity/:name/history",
            guard([&app, authenticate, target_user](const Request& req, Response& res) {
                const User caller = authenticate(req);
                const UserId owner = target_user(req, caller);
                const auto versions = app.workspace().history(owner, ActivityId(req.path_params.at("activity")),
                                                              req.path_params.at("name"));
                if (versions.empty()) throw Error(ErrorCode::not_found, "no such theory");
                send_json(res, {{"versions", versions}});
            }));
    svr.Get("/theories/:activity/:name/versions/:version",
            guard([&app, authenticate, target_user](const Request& req, Response& res) {
                const User caller = authenticate(req);
                const UserId owner = target_user(req, caller);
                const std::string content = app.workspace().version_content(
                    owner, ActivityId(req.path_params.at("activity")), req.path_params.at("name"),
                    std::stoll(req.path_params.at("version")));
                send_json(res, {{"content", content}});
            }));

    svr.Get("/archive/:activity", guard([&app, authenticate, target_user](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const UserId owner = target_user(req, caller);
        const std::string activity = req.path_params.at("activity");
        res.set_header("Content-Disposition", "attachment; filename=\"" + activity + ".tar\"");
        res.set_content(app.workspace().export_archive(owner, ActivityId(activity)), "application/x-tar");
    }));
    svr.Put("/archive/:activity", guard([&app, authenticate](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const auto names =
            app.workspace().import_archive(caller.id, ActivityId(req.path_params.at("activity")), req.body);
        send_json(res, {{"imported", names}});
    }));

    // -- lint and check ---------------------------------------------------------
    svr.Post("/lint", guard([&app, authenticate](const Request& req, Response& res) {
        authenticate(req);
        const json body = parse_body(req);
        const std::string content = body.at("content").get<std::string>();
        std::shared_ptr<const lint::Ruleset> rules;
        if (auto it = body.find("activity"); it != body.end() && !it->is_null()) {
            const ActivityId activity(it->get<std::string>());
            if (!app.activities().find(activity)) throw Error(ErrorCode::not_found, "unknown activity");
            rules = app.activities().ruleset(activity);
        }
        const bool wanted = body.value("linter", true);
        const auto tokens = isar::tokenize(content);
        std::vector<Diagnostic> structure, findings;
        for (const auto& s : isar::check_structure(tokens)) structure.push_back(isar::to_diagnostic(s));
        if (rules && (wanted || !rules->student_toggleable)) findings = lint::lint(content, *rules);
        std::vector<Diagnostic> all = structure;
        all.insert(all.end(), findings.begin(), findings.end());
        json folds = json::array();
        for (const auto& f : isar::fold_regions(tokens)) folds.push_back({{"start_line", f.start_line}, {"end_line", f.end_line}});
        send_json(res, {{"diagnostics", all}, {"structure", structure}, {"lint", findings}, {"folds", folds}});
    }));

    auto submit = [&app](const User& caller, const json& body) {
        const ActivityId activity(body.at("activity").get<std::string>());
        const auto names = body.at("names").get<std::vector<std::string>>();
        return app.checks().submit_check(caller, activity, names, body.value("linter", true));
    };
    svr.Post("/check", guard([authenticate, submit](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const CheckId id = submit(caller, parse_body(req));
        res.set_header("Location", "/check/" + id.str());
        send_json(res, {{"check_id", id}}, 202);
    }));
    svr.Get("/check/:id", guard([&app, authenticate](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const auto result = app.checks().result(CheckId(req.path_params.at("id")));
        if (!result) throw Error(ErrorCode::not_found, "unknown or expired check");
        if (result->user != caller.id && caller.role != Role::instructor) {
            throw Error(ErrorCode::permission_denied, "check belongs to another user");
        }
        send_json(res, *result);
    }));

    // -- realtime channel -------------------------------------------------------
    // Stream: GET /events/stream (server-sent events). Fallback: long-poll
    // GET /events?after=N&wait=MS. Upstream: POST /events.
    auto after_of = [](const Request& req) -> std::uint64_t {
        if (req.has_header("Last-Event-ID")) return std::stoull(req.get_header_value("Last-Event-ID"));
        if (auto a = query(req, "after")) return std::stoull(*a);
        return 0;
    };
    svr.Get("/events", guard([this, &app, authenticate, after_of](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const std::uint64_t after = after_of(req);
        const auto wait = std::chrono::milliseconds(std::clamp<long long>(
            query(req, "wait") ? std::stoll(*query(req, "wait")) : 0, 0, 60'000));
        const auto deadline = std::chrono::steady_clock::now() + wait;
        std::vector<workspace::ChannelMessage> messages = app.channel().since(caller.id, after);
        while (messages.empty() && !stopping_ && std::chrono::steady_clock::now() < deadline) {
            const auto slice = std::min<std::chrono::milliseconds>(
                std::chrono::milliseconds(500), std::chrono::duration_cast<std::chrono::milliseconds>(
                                                    deadline - std::chrono::steady_clock::now()));
            messages = app.channel().since(caller.id, after, std::max(slice, std::chrono::milliseconds(1)));
        }
        json out = json::array();
        for (const auto& m : messages) out.push_back({{"seq", m.seq}, {"message", m.body}});
        send_json(res, {{"messages", out}, {"last_seq", messages.empty() ? after : messages.back().seq}});
    }));
    svr.Get("/events/stream", guard([this, &app, authenticate, after_of](const Request& req, Response& res) {
        const User caller = authenticate(req);
        auto cursor = std::make_shared<std::uint64_t>(after_of(req));
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [this, &app, user = caller.id, cursor](std::size_t, httplib::DataSink& sink) {
                if (stopping_) return false;
                const auto messages = app.channel().since(user, *cursor, std::chrono::milliseconds(500));
                std::string chunk;
                for (const auto& m : messages) {
                    chunk += "id: " + std::to_string(m.seq) + "\nevent: message\ndata: " + m.body.dump() + "\n\n";
                    *cursor = m.seq;
                }
                if (chunk.empty()) chunk = ": keepalive\n\n";
                return sink.write(chunk.data(), chunk.size()) && !stopping_;
            });
    }));
    svr.Post("/events", guard([&app, authenticate, submit](const Request& req, Response& res) {
        const User caller = authenticate(req);
        const json body = parse_body(req);
        const std::string type = body.value("type", std::string());
        if (type == "ping") {
            const auto seq = app.channel().publish(caller.id, {{"type", "pong"}, {"data", body.value("data", json())}});
            send_json(res, {{"seq", seq}});
        } else if (type == "check") {
            send_json(res, {{"check_id", submit(caller, body)}}, 202);
        } else {
            throw Error(ErrorCode::invalid_argument, "unknown upstream message type '" + type + "'");
        }
    }));

    // -- activities -------------------------------------------------------------
    svr.Get("/activities", guard([&app, authenticate](const Request& req, Response& res) {
        authenticate(req);
        send_json(res, {{"activities", app.activities().list()}});
    }));
    svr.Get("/activities/:id", guard([&app, authenticate](const Request& req, Response& res) {
        authenticate(req);
        const auto config = app.activities().find(ActivityId(req.path_params.at("id")));
        if (!config) throw Error(ErrorCode::not_found, "unknown activity");
        send_json(res, *config);
    }));
    svr.Post("/activities", guard([&app, authenticate, require_instructor](const Request& req, Response& res) {
        require_instructor(authenticate(req));
        const auto config = parse_body(req).get<ActivityConfig>();
        const bool replaced = app.activities().put(config);
        send_json(res, config, replaced ? 200 : 201);
    }));

    // -- telemetry and analytics ------------------------------------------------
    svr.Get("/export", guard([&app, authenticate](const Request& req, Response& res) {
        const User caller = authenticate(req);
        telemetry::EventFilter filter;
        if (auto v = query(req, "user")) filter.user = UserId(*v);
        if (auto v = query(req, "activity")) filter.activity = ActivityId(*v);
        if (auto v = query(req, "kind")) filter.kind = telemetry::parse_event_kind(*v);
        if (auto v = query(req, "from")) filter.from = parse_timestamp(*v);
        if (auto v = query(req, "to")) filter.to = parse_timestamp(*v);
        std::ostringstream out;
        app.events().export_events(out, filter, caller.role);
        res.set_content(out.str(), "application/x-ndjson");
    }));
    svr.Post("/import", guard([&app, authenticate, require_instructor](const Request& req, Response& res) {
        require_instructor(authenticate(req));
        std::istringstream in(req.body);
        send_json(res, {{"imported", app.events().import_events(in)}});
    }));
    svr.Get("/analytics/:measure", guard([&app, authenticate, require_instructor](const Request& req, Response& res) {
        require_instructor(authenticate(req));
        analytics::AnalysisRequest request;
        const auto measure = analytics::parse_measure(req.path_params.at("measure"));
        if (!measure) throw Error(ErrorCode::not_found, "unknown measure");
        request.measure = *measure;
        if (auto v = query(req, "user")) request.user = UserId(*v);
        if (auto v = query(req, "activity")) {
            request.activity = ActivityId(*v);
            if (const auto config = app.activities().find(*request.activity)) request.exercises = config->exercises;
        }
        if (auto v = query(req, "idle_threshold")) {
            request.idle_threshold = std::chrono::milliseconds(static_cast<long long>(std::stod(*v) * 60'000.0));
        }
        if (auto v = query(req, "group_by")) {
            if (*v == "user") {
                request.group_by = analytics::GroupBy::user;
            } else if (*v == "activity") {
                request.group_by = analytics::GroupBy::activity;
            } else if (*v != "all") {
                throw Error(ErrorCode::invalid_argument, "group_by must be all, user or activity");
            }
        }
        send_json(res, app.analyze(request));
    }));

    svr.Get("/metrics", guard([&app](const Request&, Response& res) { send_json(res, app.metrics_snapshot()); }));

    svr.set_error_handler([](const Request&, Response& res) {
        if (res.body.empty()) send_error(res, res.status, "http-error", httplib::status_message(res.status));
    });
}

}  // namespace prooflab::web
