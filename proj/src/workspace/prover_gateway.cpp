#include "prooflab/workspace/prover_gateway.hpp"

namespace prooflab::workspace {

using protocol::ConnectionHandle;
using protocol::ProverSessionId;

ProverGateway::ProverGateway(Connector connector, Options options)
    : connector_(std::move(connector)), options_(std::move(options)) {}

ProverGateway::~ProverGateway() {
    try {
        shutdown();
    } catch (...) {
    }
}

ConnectionHandle ProverGateway::connection() {
    std::lock_guard lock(mutex_);
    if (connection_ && connection_->alive()) return connection_;
    if (connection_) {
        connection_->close();
        connection_.reset();
        sessions_.clear();
    }
    try {
        connection_ = connector_();
    } catch (const Error& e) {
        throw Error(ErrorCode::prover_unavailable, std::string("prover unavailable: ") + e.what());
    }
    return connection_;
}

void ProverGateway::forget_connection(const ConnectionHandle& conn) {
    std::lock_guard lock(mutex_);
    if (connection_ == conn) {
        connection_->close();
        connection_.reset();
        sessions_.clear();
    }
}

ProverSessionId ProverGateway::session_for(const UserId& user, const ConnectionHandle& conn) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = sessions_.find(user); it != sessions_.end()) {
            it->second.busy = true;
            return it->second.id;
        }
    }
    // Per-user serialization by the caller means no duplicate start for one user.
    const ProverSessionId id = conn->session_start(options_.session, options_.task_timeout);
    std::lock_guard lock(mutex_);
    if (connection_ != conn) throw Error(ErrorCode::connection_lost, "prover connection replaced");
    sessions_[user] = UserSession{id, now_ms(), true};
    return id;
}

ProverGateway::Outcome ProverGateway::check(const UserId& user, const std::vector<std::string>& theories,
                                            const std::filesystem::path& master_dir,
                                            const std::function<void(const protocol::ProgressNote&)>& on_progress) {
    const auto started = std::chrono::steady_clock::now();
    auto release = [&] {
        std::lock_guard lock(mutex_);
        if (auto it = sessions_.find(user); it != sessions_.end()) {
            it->second.busy = false;
            it->second.last_used = now_ms();
        }
    };
    for (int attempt = 0;; ++attempt) {
        const ConnectionHandle conn = connection();
        try {
            const ProverSessionId session = session_for(user, conn);
            const auto task = conn->use_theories(session, theories, master_dir);
            auto outcome = conn->await_task(task, options_.task_timeout, on_progress);
            release();
            return Outcome{std::move(outcome), session,
                           std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                                 started)};
        } catch (const Error& e) {
            release();
            switch (e.code()) {
            case ErrorCode::unknown_session: {
                // The prover lost our session (restart); start a fresh one once.
                std::lock_guard lock(mutex_);
                sessions_.erase(user);
                if (attempt == 0) continue;
                throw Error(ErrorCode::prover_unavailable, e.what());
            }
            case ErrorCode::connection_lost:
            case ErrorCode::timeout:
            case ErrorCode::protocol_violation:
            case ErrorCode::framing_error:
                forget_connection(conn);
                if (attempt == 0 && e.code() == ErrorCode::connection_lost) continue;
                throw Error(ErrorCode::prover_unavailable, std::string("prover unavailable: ") + e.what());
            default: throw;
            }
        }
    }
}

std::size_t ProverGateway::reap_idle(Timestamp now) {
    std::vector<ProverSessionId> stale;
    ConnectionHandle conn;
    {
        std::lock_guard lock(mutex_);
        conn = connection_;
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (!it->second.busy && now - it->second.last_used > options_.idle_timeout) {
                stale.push_back(it->second.id);
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }
    if (conn && conn->alive()) {
        for (const auto& id : stale) {
            try {
                conn->session_stop(id, std::chrono::seconds(10));
            } catch (const Error&) {
                // The prover drops the session with the connection anyway.
            }
        }
    }
    return stale.size();
}

std::map<UserId, ProverSessionId> ProverGateway::sessions() const {
    std::lock_guard lock(mutex_);
    std::map<UserId, ProverSessionId> out;
    for (const auto& [user, s] : sessions_) out.emplace(user, s.id);
    return out;
}

void ProverGateway::shutdown() {
    std::vector<ProverSessionId> all;
    ConnectionHandle conn;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [user, s] : sessions_) all.push_back(s.id);
        sessions_.clear();
        conn = std::move(connection_);
    }
    if (!conn) return;
    if (conn->alive()) {
        for (const auto& id : all) {
            try {
                conn->session_stop(id, std::chrono::seconds(5));
            } catch (const Error&) {
            }
        }
    }
    conn->close();
}

}  // namespace prooflab::workspace
