#include "criteria.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

int main(int argc, char** argv) {
    using namespace prooflab::acceptance;
    CLI::App cli{"Acceptance suite: one line per criterion"};
    std::string only;
    cli.add_option("--only", only, "Run the criteria whose name contains this text");
    CLI11_PARSE(cli, argc, argv);

    auto criteria = local_criteria();
    for (auto& c : server_criteria()) criteria.push_back(std::move(c));

    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && c.name.find(only) == std::string::npos) continue;
        ++ran;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += !v.pass;
        std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << v.detail << " (" << std::fixed
                  << std::setprecision(1) << secs << " s)" << std::endl;
    }
    std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 && ran > 0 ? 0 : 1;
}
