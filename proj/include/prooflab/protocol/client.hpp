#pragma once

#include "prooflab/common.hpp"
#include "prooflab/protocol/framing.hpp"
#include "prooflab/protocol/transport.hpp"

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace prooflab::protocol {

using ProverSessionId = StrongId<struct ProverSessionIdTag>;
using TaskId = StrongId<struct TaskIdTag>;

struct ProverAddress {
    enum class Transport { tcp, pipe };

    Transport transport = Transport::tcp;
    std::string host;
    std::uint16_t port = 0;
    std::string command;
    std::string password;

    static ProverAddress tcp(std::string host, std::uint16_t port, std::string password);
    static ProverAddress pipe(std::string command, std::string password);
    /// Parses `tcp:HOST:PORT` or `pipe:COMMAND LINE`.
    static ProverAddress parse(const std::string& spec, std::string password);
};

struct SessionOptions {
    /// Forwarded as `headless_consolidate_delay`.
    std::chrono::duration<double> consolidate_delay{0.5};
    std::string parent_session = "HOL";
};

struct ProgressNote {
    Timestamp received;
    std::string text;
};

enum class Verdict { finished, failed };

struct ProverMessage {
    Severity kind = Severity::error;
    std::string text;
    std::string theory_name;
    std::optional<SourceRange> position;

    bool operator==(const ProverMessage&) const = default;
};

void to_json(json& j, const ProverMessage& m);
void from_json(const json& j, ProverMessage& m);

struct TaskOutcome {
    TaskId task_id;
    std::vector<ProgressNote> progress;
    Verdict verdict = Verdict::failed;
    std::vector<ProverMessage> messages;
    /// Raw terminal payload.
    json result;

    std::size_t error_count() const;
    std::string failure_message() const;
};

struct ClientOptions {
    std::chrono::milliseconds handshake_timeout{10'000};
    std::chrono::milliseconds command_timeout{30'000};
};

/// A live connection to an Isabelle-server-compatible prover. Safe to share
/// between threads: command submission is serialized, replies are dispatched
/// by task id to whichever thread awaits them.
class ProverClient {
public:
    /// Sends the password line and waits for the greeting. Throws
    /// Error(connection_refused | auth_failed | protocol_violation).
    static std::shared_ptr<ProverClient> connect(const ProverAddress& addr, ClientOptions options = {});

    /// Takes over an already established stream (tests, in-process provers).
    static std::shared_ptr<ProverClient> over(std::unique_ptr<ByteStream> stream, const std::string& password,
                                              ClientOptions options = {});

    ~ProverClient();
    ProverClient(const ProverClient&) = delete;
    ProverClient& operator=(const ProverClient&) = delete;

    const json& greeting() const { return greeting_; }
    bool alive() const;

    /// Starts a prover session and waits for it to become ready.
    /// Throws Error(prover_error) with the prover's message on failure.
    ProverSessionId session_start(const SessionOptions& opts, std::chrono::milliseconds timeout = std::chrono::minutes(5));
    void session_stop(const ProverSessionId& session, std::chrono::milliseconds timeout = std::chrono::seconds(60));

    /// Returns once the prover acknowledged; results arrive asynchronously.
    /// `theories` are paths relative to `master_dir`, with or without `.thy`.
    /// Throws Error(io_error) for unreadable files, Error(unknown_session).
    TaskId use_theories(const ProverSessionId& session, const std::vector<std::string>& theories,
                        const std::filesystem::path& master_dir);

    void purge_theories(const ProverSessionId& session, const std::vector<std::string>& theories,
                        const std::filesystem::path& master_dir);

    /// Round-trips a payload through the server (`echo`), returning the reply.
    json echo(const json& payload);

    /// Blocks until the task's terminal verdict or the timeout. Throws
    /// Error(timeout) if still running, Error(connection_lost). Progress notes
    /// are handed to on_progress in arrival order on the calling thread.
    TaskOutcome await_task(const TaskId& task, std::chrono::milliseconds timeout,
                           const std::function<void(const ProgressNote&)>& on_progress = {});

    void close();

private:
    struct TaskState {
        std::vector<ProgressNote> progress;
        std::optional<Verdict> verdict;
        json result;
    };

    ProverClient(std::unique_ptr<ByteStream> stream, ClientOptions options);

    void handshake(const std::string& password);
    void reader_loop();
    void dispatch(Reply reply);
    json command(const std::string& name, const json& payload);
    TaskId task_of(const json& ok_payload) const;

    std::unique_ptr<ByteStream> stream_;
    ClientOptions options_;
    json greeting_;

    std::mutex command_mutex_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    bool greeted_ = false;
    std::optional<Reply> greeting_reply_;
    std::optional<Reply> sync_reply_;
    bool dead_ = false;
    std::string dead_reason_;
    std::map<TaskId, TaskState> tasks_;

    std::thread reader_;
};

using ConnectionHandle = std::shared_ptr<ProverClient>;

}  // namespace prooflab::protocol
