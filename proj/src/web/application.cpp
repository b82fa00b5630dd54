#include "prooflab/web/server.hpp"

#include <unistd.h>

#include <fstream>
#include <numeric>

namespace prooflab::web {

namespace fs = std::filesystem;

void ServerMetrics::touch(const UserId& user) {
    std::lock_guard lock(mutex_);
    last_seen_[user] = now_ms();
}

std::size_t ServerMetrics::active_users(std::chrono::milliseconds window) const {
    std::lock_guard lock(mutex_);
    const Timestamp cutoff = now_ms() - window;
    return static_cast<std::size_t>(std::count_if(last_seen_.begin(), last_seen_.end(),
                                                  [&](const auto& entry) { return entry.second >= cutoff; }));
}

std::size_t ServerMetrics::current_rss_bytes() {
    std::ifstream statm("/proc/self/statm");
    std::size_t pages_total = 0, pages_resident = 0;
    if (!(statm >> pages_total >> pages_resident)) return 0;
    return pages_resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

void ServerMetrics::sample_memory() {
    const MemorySample s{now_ms(), current_rss_bytes()};
    std::lock_guard lock(mutex_);
    samples_.push_back(s);
    while (samples_.size() > 720) samples_.pop_front();
}

std::vector<MemorySample> ServerMetrics::memory() const {
    std::lock_guard lock(mutex_);
    return {samples_.begin(), samples_.end()};
}

Application::Application(AppOptions options) : options_(std::move(options)) {
    fs::create_directories(options_.data_dir);
    workspace_ = std::make_unique<workspace::Workspace>(options_.data_dir, options_.limits);
    events_ = std::make_unique<telemetry::EventStore>(options_.data_dir / "telemetry.db");
    activities_ = std::make_unique<ActivityRegistry>(options_.config_dir.empty() ? fs::path()
                                                                                 : options_.config_dir / "activities");
    if (!options_.config_dir.empty()) {
        load_users(options_.config_dir / "users.json");
        if (const auto file = options_.config_dir / "categories.json"; fs::exists(file)) {
            std::ifstream in(file);
            categories_ = json::parse(in).get<analytics::CategoryTable>();
        }
    }

    protocol::ProverAddress address;
    bool have_prover = true;
    if (options_.prover == "mock") {
        mock::MockConfig cfg;
        cfg.password = random_hex(16);
        cfg.default_latency = options_.mock_latency;
        mock_ = std::make_unique<mock::MockProver>(cfg);
        mock_->start();
        address = protocol::ProverAddress::tcp("127.0.0.1", mock_->port(), cfg.password);
    } else if (options_.prover == "none") {
        have_prover = false;
    } else {
        address = protocol::ProverAddress::parse(options_.prover, options_.prover_password);
    }
    if (have_prover) {
        workspace::ProverGateway::Options gw;
        gw.session = options_.session;
        gw.idle_timeout = options_.session_idle;
        gw.task_timeout = options_.prover_task_timeout;
        gateway_ = std::make_unique<workspace::ProverGateway>(
            [address] { return protocol::ProverClient::connect(address); }, gw);
    }

    workspace::CheckServiceOptions co;
    co.worker_threads = options_.worker_threads;
    checks_ = std::make_unique<workspace::CheckService>(
        *workspace_, *events_, channel_, gateway_.get(),
        [this](const ActivityId& id) { return activities_->ruleset(id); }, co);

    metrics_.sample_memory();
    sampler_ = std::thread([this] {
        std::unique_lock lock(sampler_mutex_);
        while (!sampler_cv_.wait_for(lock, options_.memory_sample_interval, [&] { return stopping_; })) {
            metrics_.sample_memory();
        }
    });
}

Application::~Application() {
    {
        std::lock_guard lock(sampler_mutex_);
        stopping_ = true;
    }
    sampler_cv_.notify_all();
    if (sampler_.joinable()) sampler_.join();
    channel_.close();
    checks_.reset();
    if (gateway_) gateway_->shutdown();
    gateway_.reset();
    if (mock_) mock_->stop();
}

void Application::load_users(const fs::path& file) {
    if (!fs::exists(file)) return;
    std::ifstream in(file);
    const json users = json::parse(in);
    for (const auto& u : users.at("users")) {
        workspace_->upsert_user(u.at("name").get<std::string>(), u.at("password").get<std::string>(),
                                parse_role(u.value("role", std::string("student"))));
    }
}

namespace {

json duration_summary(std::vector<std::int64_t> values) {
    if (values.empty()) return json{{"count", 0}, {"mean", nullptr}, {"p50", nullptr}, {"p95", nullptr}, {"max", nullptr}};
    std::sort(values.begin(), values.end());
    auto pct = [&](double p) {
        const auto idx = static_cast<std::size_t>(p * static_cast<double>(values.size() - 1) + 0.5);
        return values[std::min(idx, values.size() - 1)];
    };
    const double mean = static_cast<double>(std::accumulate(values.begin(), values.end(), std::int64_t{0})) /
                        static_cast<double>(values.size());
    return json{{"count", values.size()}, {"mean", mean}, {"p50", pct(0.5)}, {"p95", pct(0.95)}, {"max", values.back()}};
}

}  // namespace

json Application::metrics_snapshot() {
    const auto timings = checks_->timings();
    json requests = json::array();
    std::vector<std::int64_t> handling, prover, total;
    const std::size_t first = timings.size() > 200 ? timings.size() - 200 : 0;
    for (std::size_t i = 0; i < timings.size(); ++i) {
        const auto& t = timings[i];
        handling.push_back(t.server_handling.count());
        prover.push_back(t.prover_wait.count());
        total.push_back(t.total.count());
        if (i >= first) {
            requests.push_back({{"check_id", t.check},
                                {"completed", format_timestamp(t.completed)},
                                {"server_handling_ms", t.server_handling.count()},
                                {"prover_wait_ms", t.prover_wait.count()},
                                {"queue_wait_ms", t.queue_wait.count()},
                                {"total_ms", t.total.count()}});
        }
    }
    json memory = json::array();
    for (const auto& s : metrics_.memory()) memory.push_back({{"at", format_timestamp(s.at)}, {"rss_bytes", s.rss_bytes}});
    return json{{"requests", requests},
                {"server_handling_ms", duration_summary(handling)},
                {"prover_wait_ms", duration_summary(prover)},
                {"total_ms", duration_summary(total)},
                {"active_users", metrics_.active_users()},
                {"pending_checks", checks_->pending()},
                {"prover_sessions", gateway_ ? gateway_->sessions().size() : 0},
                {"memory", {{"current_rss_bytes", ServerMetrics::current_rss_bytes()}, {"samples", memory}}}};
}

json Application::analyze(const analytics::AnalysisRequest& request) {
    telemetry::EventFilter filter;
    filter.user = request.user;
    filter.activity = request.activity;
    return analytics::run_analysis(events_->query(filter), request, categories_);
}

}  // namespace prooflab::web
