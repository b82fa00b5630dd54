#include "prooflab/mock/mock_prover.hpp"

#include <CLI11.hpp>

#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    using namespace prooflab;
    CLI::App cli{"Stand-in prover server speaking the line-framed prover protocol"};
    mock::MockConfig config;
    long long latency_ms = 0;
    bool stdio = false;
    cli.add_option("--host", config.host, "Listen address")->capture_default_str();
    cli.add_option("--port", config.port, "Listen port; 0 picks a free port")->capture_default_str();
    cli.add_option("--password", config.password, "Handshake password (default: $PROOFLAB_PROVER_PASSWORD)");
    cli.add_option("--latency", latency_ms, "Added latency per use_theories, in milliseconds");
    cli.add_option("--long-threshold", config.long_reply_threshold, "Replies longer than this use the long form")
        ->capture_default_str();
    cli.add_flag("--honor-consolidate-delay", config.honor_consolidate_delay,
                 "Add each session's consolidate delay to its checks");
    cli.add_flag("--stdio", stdio, "Serve one connection on stdin/stdout instead of TCP");
    CLI11_PARSE(cli, argc, argv);

    if (config.password.empty()) {
        if (const char* pw = std::getenv("PROOFLAB_PROVER_PASSWORD")) config.password = pw;
    }
    config.default_latency = std::chrono::milliseconds(latency_ms);

    try {
        mock::MockProver prover(config);
        if (stdio) {
            prover.serve(protocol::wrap_fd_pair(STDIN_FILENO, STDOUT_FILENO));
            return 0;
        }
        sigset_t signals;
        sigemptyset(&signals);
        sigaddset(&signals, SIGINT);
        sigaddset(&signals, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &signals, nullptr);
        prover.start();
        std::cout << "port " << prover.port() << std::endl;
        int sig = 0;
        sigwait(&signals, &sig);
        prover.stop();
    } catch (const Error& e) {
        std::cerr << "mock-prover: " << to_string(e.code()) << ": " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
