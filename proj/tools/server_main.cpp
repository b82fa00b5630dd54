#include "prooflab/web/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    using namespace prooflab;
    CLI::App cli{"Teaching proof assistant backend: HTTP API, realtime channel and prover orchestration"};
    web::AppOptions options;
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
    long long mock_latency_ms = 0;
    long long session_idle_min = 30;
    double consolidate_delay = 0.5;
    cli.add_option("--host", host, "Listen address")->capture_default_str();
    cli.add_option("--port", port, "Listen port; 0 picks a free port and prints it")->capture_default_str();
    cli.add_option("--prover", options.prover, "mock | none | tcp:HOST:PORT | pipe:COMMAND")->capture_default_str();
    cli.add_option("--data-dir", options.data_dir, "Workspace, telemetry and blob storage")->capture_default_str();
    cli.add_option("--config-dir", options.config_dir, "Directory with activities/, users.json, categories.json");
    cli.add_option("--mock-latency", mock_latency_ms, "Embedded mock prover latency in milliseconds");
    cli.add_option("--workers", options.worker_threads, "Check worker threads")->capture_default_str();
    cli.add_option("--session-idle", session_idle_min, "Minutes before an idle prover session is stopped")
        ->capture_default_str();
    cli.add_option("--consolidate-delay", consolidate_delay, "headless_consolidate_delay for prover sessions")
        ->capture_default_str();
    CLI11_PARSE(cli, argc, argv);

    if (const char* pw = std::getenv("PROOFLAB_PROVER_PASSWORD")) options.prover_password = pw;
    options.mock_latency = std::chrono::milliseconds(mock_latency_ms);
    options.session_idle = std::chrono::minutes(session_idle_min);
    options.session.consolidate_delay = std::chrono::duration<double>(consolidate_delay);

    // Handle termination on this thread; every worker inherits the mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        web::Application app(options);
        web::HttpServer server(app, host);
        const auto bound = server.start(port);
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "shutting down" << std::endl;
        server.stop();
    } catch (const Error& e) {
        std::cerr << "prooflab-server: " << to_string(e.code()) << ": " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "prooflab-server: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
