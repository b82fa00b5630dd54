#pragma once

#include "prooflab/common.hpp"
#include "prooflab/protocol/client.hpp"
#include "prooflab/protocol/transport.hpp"

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace prooflab::mock {

// Theory text drives the mock's verdicts through directive comments:
//
//   (*MOCK:error 3 "Type unification failed"*)   error message at line 3
//   (*MOCK:warning 5 "Unused variable"*)         warning at line 5
//   (*MOCK:delay 0.25*)                          extra latency in seconds
//
// Every `sorry` outside comments and quotations additionally yields an
// "unfinished proof" error.

enum class DirectiveKind { error, warning, delay };

struct MockDirective {
    DirectiveKind kind;
    int line = 0;                              // error / warning
    std::chrono::milliseconds delay{0};        // delay
    std::string text;
};

struct Evaluation {
    std::vector<protocol::ProverMessage> messages;
    std::chrono::milliseconds delay{0};
};

/// Deterministic verdict for one theory. Malformed directives are ignored
/// and reported as info messages.
Evaluation evaluate(std::string_view text, const std::string& theory_name = {});

inline std::vector<protocol::ProverMessage> evaluate_theory(std::string_view text) { return evaluate(text).messages; }

struct MockConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string password;
    std::chrono::milliseconds default_latency{0};
    /// Add each session's consolidate delay to every check it runs.
    bool honor_consolidate_delay = false;
    std::size_t long_reply_threshold = 1024;
};

struct SessionRecord {
    std::string parent;
    double consolidate_delay = 0;
    std::set<std::string> master_dirs;
    std::size_t theories_checked = 0;
    bool stopped = false;
};

struct MockStats {
    std::size_t connections = 0;
    std::size_t auth_failures = 0;
    std::size_t use_theories_calls = 0;
    std::size_t theories_checked = 0;
    std::map<std::string, SessionRecord> sessions;
};

/// In-process stand-in for an Isabelle server speaking the framing of
/// prooflab::protocol.
class MockProver {
public:
    explicit MockProver(MockConfig config);
    ~MockProver();
    MockProver(const MockProver&) = delete;
    MockProver& operator=(const MockProver&) = delete;

    /// Binds and starts accepting on a background thread. Throws Error(bind_failure).
    void start();
    void stop();
    std::uint16_t port() const;

    /// Serves one already-connected stream on the calling thread.
    void serve(std::unique_ptr<protocol::ByteStream> stream);

    MockStats stats() const;
    void reset_counters();

private:
    class Connection;
    friend class Connection;

    MockConfig config_;
    std::unique_ptr<protocol::TcpListener> listener_;
    std::thread accept_thread_;
    std::atomic<bool> running_{false};

    mutable std::mutex mutex_;
    MockStats stats_;
    std::vector<std::thread> connection_threads_;
    std::vector<protocol::ByteStream*> live_streams_;
};

}  // namespace prooflab::mock
