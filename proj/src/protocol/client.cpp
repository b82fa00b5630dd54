#include "prooflab/protocol/client.hpp"

#include <array>
#include <fstream>

namespace prooflab::protocol {

ProverAddress ProverAddress::tcp(std::string host, std::uint16_t port, std::string password) {
    if (host.empty()) throw Error(ErrorCode::invalid_argument, "prover host must not be empty");
    ProverAddress a;
    a.transport = Transport::tcp;
    a.host = std::move(host);
    a.port = port;
    a.password = std::move(password);
    return a;
}

ProverAddress ProverAddress::pipe(std::string command, std::string password) {
    if (command.find_first_not_of(" \t") == std::string::npos) {
        throw Error(ErrorCode::invalid_argument, "prover command must not be empty");
    }
    ProverAddress a;
    a.transport = Transport::pipe;
    a.command = std::move(command);
    a.password = std::move(password);
    return a;
}

ProverAddress ProverAddress::parse(const std::string& spec, std::string password) {
    if (spec.starts_with("pipe:")) return pipe(spec.substr(5), std::move(password));
    if (spec.starts_with("tcp:")) {
        const std::string rest = spec.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "expected tcp:HOST:PORT");
        int port = 0;
        try {
            port = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::invalid_argument, "invalid port in '" + spec + "'");
        }
        if (port <= 0 || port > 65535) throw Error(ErrorCode::invalid_argument, "invalid port in '" + spec + "'");
        return tcp(rest.substr(0, colon), static_cast<std::uint16_t>(port), std::move(password));
    }
    throw Error(ErrorCode::invalid_argument, "prover address must start with tcp: or pipe:");
}

void to_json(json& j, const ProverMessage& m) {
    j = json{{"kind", to_string(m.kind)}, {"message", m.text}};
    if (m.position) j["pos"] = *m.position;
}

void from_json(const json& j, ProverMessage& m) {
    m.kind = parse_severity(j.value("kind", std::string("error")));
    m.text = j.at("message").get<std::string>();
    if (auto it = j.find("pos"); it != j.end() && it->is_object() && it->contains("line")) {
        SourceRange r;
        r.line = it->at("line").get<int>();
        r.column = it->value("column", 0);
        r.end_line = it->value("end_line", r.line);
        r.end_column = it->value("end_column", r.column);
        m.position = r;
    } else {
        m.position.reset();
    }
}

std::size_t TaskOutcome::error_count() const {
    std::size_t n = 0;
    for (const auto& m : messages) n += m.kind == Severity::error;
    return n;
}

std::string TaskOutcome::failure_message() const {
    if (result.is_object()) return result.value("message", std::string("task failed"));
    if (result.is_string()) return result.get<std::string>();
    return "task failed";
}

namespace {

std::vector<ProverMessage> messages_of(const json& result) {
    std::vector<ProverMessage> out;
    if (!result.is_object()) return out;
    if (auto errors = result.find("errors"); errors != result.end() && errors->is_array()) {
        for (const auto& e : *errors) out.push_back(e.get<ProverMessage>());
    }
    if (auto nodes = result.find("nodes"); nodes != result.end() && nodes->is_array()) {
        for (const auto& node : *nodes) {
            const std::string theory = node.value("theory_name", std::string());
            for (const auto& m : node.value("messages", json::array())) {
                auto msg = m.get<ProverMessage>();
                msg.theory_name = theory;
                out.push_back(std::move(msg));
            }
        }
    }
    return out;
}

std::string format_seconds(double seconds) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%g", seconds);
    return buf.data();
}

}  // namespace

std::shared_ptr<ProverClient> ProverClient::connect(const ProverAddress& addr, ClientOptions options) {
    std::unique_ptr<ByteStream> stream = addr.transport == ProverAddress::Transport::tcp
                                             ? connect_tcp(addr.host, addr.port)
                                             : spawn_pipe(addr.command);
    return over(std::move(stream), addr.password, options);
}

std::shared_ptr<ProverClient> ProverClient::over(std::unique_ptr<ByteStream> stream, const std::string& password,
                                                 ClientOptions options) {
    std::shared_ptr<ProverClient> client(new ProverClient(std::move(stream), options));
    client->handshake(password);
    return client;
}

ProverClient::ProverClient(std::unique_ptr<ByteStream> stream, ClientOptions options)
    : stream_(std::move(stream)), options_(options) {
    reader_ = std::thread([this] { reader_loop(); });
}

ProverClient::~ProverClient() {
    close();
    if (reader_.joinable()) reader_.join();
}

bool ProverClient::alive() const {
    std::lock_guard lock(mutex_);
    return !dead_;
}

void ProverClient::close() {
    {
        std::lock_guard lock(mutex_);
        if (dead_) return;
        dead_ = true;
        dead_reason_ = "connection closed by client";
    }
    cv_.notify_all();
    stream_->shutdown();
}

void ProverClient::handshake(const std::string& password) {
    try {
        stream_->write_all(password + "\n");
    } catch (const Error& e) {
        close();
        throw Error(ErrorCode::connection_refused, e.what());
    }
    std::unique_lock lock(mutex_);
    const bool done = cv_.wait_for(lock, options_.handshake_timeout, [&] { return greeted_ || dead_; });
    if (!done || !greeting_reply_) {
        const std::string reason = dead_ ? dead_reason_ : "no greeting received";
        lock.unlock();
        close();
        throw Error(ErrorCode::protocol_violation, "prover handshake failed: " + reason);
    }
    const Reply reply = *greeting_reply_;
    lock.unlock();
    if (reply.tag == ReplyTag::ok) {
        greeting_ = reply.payload;
        return;
    }
    close();
    if (reply.tag == ReplyTag::error) {
        throw Error(ErrorCode::auth_failed, "prover rejected password: " + reply.payload.dump());
    }
    throw Error(ErrorCode::protocol_violation, "unexpected greeting tag " + std::string(to_string(reply.tag)));
}

void ProverClient::reader_loop() {
    FrameDecoder decoder;
    std::array<char, 65536> buffer{};
    std::string reason = "connection closed by prover";
    try {
        for (;;) {
            const std::size_t n = stream_->read_some(buffer);
            if (n == 0) {
                decoder.finish();
                break;
            }
            decoder.feed(std::string_view(buffer.data(), n));
            while (auto message = decoder.next()) dispatch(parse_reply(*message));
        }
    } catch (const Error& e) {
        reason = e.what();
    } catch (const std::exception& e) {
        reason = e.what();
    }
    {
        std::lock_guard lock(mutex_);
        if (!dead_) {
            dead_ = true;
            dead_reason_ = reason;
        }
    }
    cv_.notify_all();
}

void ProverClient::dispatch(Reply reply) {
    {
        std::lock_guard lock(mutex_);
        if (!greeted_) {
            greeted_ = true;
            greeting_reply_ = std::move(reply);
        } else if (reply.tag == ReplyTag::ok || reply.tag == ReplyTag::error) {
            // Register the task before anyone can observe its async replies.
            if (reply.tag == ReplyTag::ok && reply.payload.is_object() && reply.payload.contains("task")) {
                tasks_.try_emplace(TaskId(reply.payload["task"].get<std::string>()));
            }
            sync_reply_ = std::move(reply);
        } else {
            const json& p = reply.payload;
            if (!p.is_object() || !p.contains("task") || !p["task"].is_string()) return;
            const auto it = tasks_.find(TaskId(p["task"].get<std::string>()));
            if (it == tasks_.end() || it->second.verdict) return;
            if (reply.tag == ReplyTag::note) {
                it->second.progress.push_back({now_ms(), p.value("message", std::string())});
                return;
            }
            it->second.verdict = reply.tag == ReplyTag::finished ? Verdict::finished : Verdict::failed;
            it->second.result = p;
        }
    }
    cv_.notify_all();
}

json ProverClient::command(const std::string& name, const json& payload) {
    std::lock_guard command_lock(command_mutex_);
    {
        std::lock_guard lock(mutex_);
        if (dead_) throw Error(ErrorCode::connection_lost, "prover connection lost: " + dead_reason_);
        sync_reply_.reset();
    }
    stream_->write_all(frame_encode(name, payload));

    std::unique_lock lock(mutex_);
    const bool done = cv_.wait_for(lock, options_.command_timeout, [&] { return sync_reply_.has_value() || dead_; });
    if (!sync_reply_) {
        if (!done) {
            lock.unlock();
            // A late reply would be paired with the next command.
            close();
            throw Error(ErrorCode::timeout, "prover did not acknowledge '" + name + "'");
        }
        throw Error(ErrorCode::connection_lost, "prover connection lost: " + dead_reason_);
    }
    Reply reply = std::move(*sync_reply_);
    sync_reply_.reset();
    lock.unlock();

    if (reply.tag == ReplyTag::ok) return reply.payload;
    const json& p = reply.payload;
    const std::string message = p.is_object() ? p.value("message", p.dump()) : (p.is_string() ? p.get<std::string>() : p.dump());
    if (p.is_object() && p.value("kind", std::string()) == "unknown_session") {
        throw Error(ErrorCode::unknown_session, message);
    }
    throw Error(ErrorCode::prover_error, message);
}

TaskId ProverClient::task_of(const json& ok_payload) const {
    if (!ok_payload.is_object() || !ok_payload.contains("task") || !ok_payload["task"].is_string()) {
        throw Error(ErrorCode::protocol_violation, "acknowledgement without task id: " + ok_payload.dump());
    }
    return TaskId(ok_payload["task"].get<std::string>());
}

ProverSessionId ProverClient::session_start(const SessionOptions& opts, std::chrono::milliseconds timeout) {
    if (opts.consolidate_delay.count() < 0) {
        throw Error(ErrorCode::invalid_argument, "consolidate delay must be non-negative");
    }
    const json payload = {
        {"session", opts.parent_session},
        {"options", json::array({"headless_consolidate_delay=" + format_seconds(opts.consolidate_delay.count())})},
    };
    const TaskId task = task_of(command("session_start", payload));
    TaskOutcome outcome = await_task(task, timeout);
    if (outcome.verdict == Verdict::failed) throw Error(ErrorCode::prover_error, outcome.failure_message());
    const std::string id = outcome.result.value("session_id", std::string());
    if (id.empty()) throw Error(ErrorCode::protocol_violation, "session_start finished without session id");
    return ProverSessionId(id);
}

void ProverClient::session_stop(const ProverSessionId& session, std::chrono::milliseconds timeout) {
    const TaskId task = task_of(command("session_stop", {{"session_id", session.str()}}));
    TaskOutcome outcome = await_task(task, timeout);
    if (outcome.verdict == Verdict::failed) throw Error(ErrorCode::prover_error, outcome.failure_message());
}

TaskId ProverClient::use_theories(const ProverSessionId& session, const std::vector<std::string>& theories,
                                  const std::filesystem::path& master_dir) {
    for (const auto& theory : theories) {
        std::filesystem::path file = master_dir / theory;
        if (file.extension() != ".thy") file += ".thy";
        std::ifstream probe(file);
        if (!probe) throw Error(ErrorCode::io_error, "cannot read theory file " + file.string());
    }
    const json payload = {
        {"session_id", session.str()},
        {"theories", theories},
        {"master_dir", master_dir.string()},
    };
    return task_of(command("use_theories", payload));
}

void ProverClient::purge_theories(const ProverSessionId& session, const std::vector<std::string>& theories,
                                  const std::filesystem::path& master_dir) {
    command("purge_theories", {{"session_id", session.str()}, {"theories", theories}, {"master_dir", master_dir.string()}});
}

json ProverClient::echo(const json& payload) { return command("echo", payload); }

TaskOutcome ProverClient::await_task(const TaskId& task, std::chrono::milliseconds timeout,
                                     const std::function<void(const ProgressNote&)>& on_progress) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::unique_lock lock(mutex_);
    auto it = tasks_.find(task);
    if (it == tasks_.end()) throw Error(ErrorCode::invalid_argument, "unknown task " + task.str());
    std::size_t delivered = 0;
    for (;;) {
        const bool woke = cv_.wait_until(lock, deadline, [&] {
            const auto& state = tasks_.at(task);
            return state.verdict.has_value() || dead_ || (on_progress && state.progress.size() > delivered);
        });
        it = tasks_.find(task);
        if (on_progress && it->second.progress.size() > delivered) {
            std::vector<ProgressNote> fresh(it->second.progress.begin() + static_cast<std::ptrdiff_t>(delivered),
                                            it->second.progress.end());
            delivered = it->second.progress.size();
            lock.unlock();
            for (const auto& note : fresh) on_progress(note);
            lock.lock();
            it = tasks_.find(task);
        }
        if (it->second.verdict) break;
        if (!woke) throw Error(ErrorCode::timeout, "task " + task.str() + " still running");
        if (dead_) throw Error(ErrorCode::connection_lost, "prover connection lost: " + dead_reason_);
    }
    TaskOutcome outcome;
    outcome.task_id = task;
    outcome.progress = std::move(it->second.progress);
    outcome.verdict = *it->second.verdict;
    outcome.result = std::move(it->second.result);
    tasks_.erase(it);
    lock.unlock();
    outcome.messages = messages_of(outcome.result);
    return outcome;
}

}  // namespace prooflab::protocol
