#pragma once

#include "prooflab/analytics/measures.hpp"
#include "prooflab/mock/mock_prover.hpp"
#include "prooflab/telemetry/event_store.hpp"
#include "prooflab/web/activity.hpp"
#include "prooflab/workspace/channel.hpp"
#include "prooflab/workspace/check_service.hpp"
#include "prooflab/workspace/prover_gateway.hpp"
#include "prooflab/workspace/workspace.hpp"

#include <atomic>
#include <deque>
#include <memory>
#include <thread>

namespace httplib {
class Server;
}

namespace prooflab::web {

struct AppOptions {
    std::filesystem::path data_dir = "data";
    /// Holds activities/*.json, users.json and categories.json; all optional.
    std::filesystem::path config_dir;
    /// "mock" (embedded mock prover), "none", "tcp:HOST:PORT" or "pipe:COMMAND".
    std::string prover = "mock";
    std::string prover_password;
    std::chrono::milliseconds mock_latency{0};
    protocol::SessionOptions session;
    std::chrono::milliseconds session_idle = std::chrono::minutes(30);
    std::chrono::milliseconds prover_task_timeout = std::chrono::minutes(5);
    std::size_t worker_threads = 8;
    workspace::WorkspaceLimits limits;
    std::chrono::milliseconds memory_sample_interval = std::chrono::seconds(5);
};

struct MemorySample {
    Timestamp at;
    std::size_t rss_bytes;
};

class ServerMetrics {
public:
    void touch(const UserId& user);
    std::size_t active_users(std::chrono::milliseconds window = std::chrono::minutes(5)) const;
    void sample_memory();
    std::vector<MemorySample> memory() const;

    static std::size_t current_rss_bytes();

private:
    mutable std::mutex mutex_;
    std::map<UserId, Timestamp> last_seen_;
    std::deque<MemorySample> samples_;
};

/// Service graph behind the HTTP layer.
class Application {
public:
    explicit Application(AppOptions options);
    ~Application();
    Application(const Application&) = delete;
    Application& operator=(const Application&) = delete;

    const AppOptions& options() const { return options_; }
    workspace::Workspace& workspace() { return *workspace_; }
    telemetry::EventStore& events() { return *events_; }
    workspace::ChannelHub& channel() { return channel_; }
    workspace::CheckService& checks() { return *checks_; }
    workspace::ProverGateway* gateway() { return gateway_.get(); }
    ActivityRegistry& activities() { return *activities_; }
    const analytics::CategoryTable& categories() const { return categories_; }
    mock::MockProver* embedded_mock() { return mock_.get(); }
    ServerMetrics& metrics() { return metrics_; }

    json metrics_snapshot();
    json analyze(const analytics::AnalysisRequest& request);

private:
    void load_users(const std::filesystem::path& file);

    AppOptions options_;
    std::unique_ptr<mock::MockProver> mock_;
    std::unique_ptr<workspace::Workspace> workspace_;
    std::unique_ptr<telemetry::EventStore> events_;
    workspace::ChannelHub channel_;
    std::unique_ptr<ActivityRegistry> activities_;
    analytics::CategoryTable categories_ = analytics::CategoryTable::defaults();
    std::unique_ptr<workspace::ProverGateway> gateway_;
    std::unique_ptr<workspace::CheckService> checks_;
    ServerMetrics metrics_;

    std::mutex sampler_mutex_;
    std::condition_variable sampler_cv_;
    bool stopping_ = false;
    std::thread sampler_;
};

/// HTTP interface. Authentication is a bearer token (Authorization header,
/// or `token` query parameter for clients that cannot set headers).
class HttpServer {
public:
    explicit HttpServer(Application& app, std::string host = "127.0.0.1");
    ~HttpServer();

    /// Binds (0 picks a free port) and serves on a background thread.
    /// Throws Error(bind_failure).
    std::uint16_t start(std::uint16_t port);
    void stop();
    /// Blocks until stop().
    void wait();
    std::uint16_t port() const { return port_; }

private:
    void install_routes();

    Application& app_;
    std::string host_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
};

}  // namespace prooflab::web
