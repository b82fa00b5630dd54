#pragma once

#include "prooflab/protocol/client.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>

namespace prooflab::workspace {

/// Owns the connection to the prover and the user -> prover-session mapping.
/// Sessions are started lazily on a user's first check and stopped after an
/// idle period. A dropped connection is re-established on the next check;
/// sessions of the old connection are forgotten.
class ProverGateway {
public:
    using Connector = std::function<protocol::ConnectionHandle()>;

    struct Options {
        protocol::SessionOptions session;
        std::chrono::milliseconds idle_timeout = std::chrono::minutes(30);
        std::chrono::milliseconds task_timeout = std::chrono::minutes(5);
    };

    struct Outcome {
        protocol::TaskOutcome task;
        protocol::ProverSessionId session;
        /// Time spent waiting on the prover, session start included.
        std::chrono::milliseconds prover_wait{0};
    };

    ProverGateway(Connector connector, Options options);
    ~ProverGateway();
    ProverGateway(const ProverGateway&) = delete;
    ProverGateway& operator=(const ProverGateway&) = delete;

    /// Runs use_theories in the user's session. Callers serialize per user.
    /// Throws Error(prover_unavailable) when the prover cannot be reached or
    /// the connection fails mid-task.
    Outcome check(const UserId& user, const std::vector<std::string>& theories,
                  const std::filesystem::path& master_dir,
                  const std::function<void(const protocol::ProgressNote&)>& on_progress = {});

    /// Stops sessions idle longer than the configured period; returns how many.
    std::size_t reap_idle(Timestamp now = now_ms());

    std::map<UserId, protocol::ProverSessionId> sessions() const;
    const Options& options() const { return options_; }

    /// Stops every session and closes the connection.
    void shutdown();

private:
    struct UserSession {
        protocol::ProverSessionId id;
        Timestamp last_used{};
        bool busy = false;
    };

    protocol::ConnectionHandle connection();
    protocol::ProverSessionId session_for(const UserId& user, const protocol::ConnectionHandle& conn);
    void forget_connection(const protocol::ConnectionHandle& conn);

    Connector connector_;
    Options options_;
    mutable std::mutex mutex_;
    protocol::ConnectionHandle connection_;
    std::map<UserId, UserSession> sessions_;
};

}  // namespace prooflab::workspace
