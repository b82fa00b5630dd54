#include "prooflab/analytics/measures.hpp"
#include "prooflab/web/activity.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    using namespace prooflab;
    CLI::App cli{"Didactic measures over a telemetry export"};
    std::string export_file, measure_name, user, activity, config_file, categories_file, format = "text",
                group_by = "all";
    double idle_minutes = 15;
    cli.add_option("export", export_file, "Telemetry export file")->required()->check(CLI::ExistingFile);
    cli.add_option("measure", measure_name, "rank | assoc | freq | durations")
        ->required()
        ->check(CLI::IsMember({"rank", "assoc", "freq", "durations"}));
    cli.add_option("--user", user, "Restrict to one user");
    cli.add_option("--activity", activity, "Restrict to one activity");
    cli.add_option("--idle-threshold", idle_minutes, "Idle cut-off in minutes; 0 disables it")->capture_default_str();
    cli.add_option("--group-by", group_by, "Ranking groups")
        ->check(CLI::IsMember({"all", "activity", "user"}))
        ->capture_default_str();
    cli.add_option("--config", config_file, "Activity configuration supplying the exercise list")
        ->check(CLI::ExistingFile);
    cli.add_option("--categories", categories_file, "Keyword table for mistake categories")->check(CLI::ExistingFile);
    cli.add_option("--format", format, "Output format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();
    CLI11_PARSE(cli, argc, argv);

    try {
        analytics::AnalysisRequest request;
        request.measure = *analytics::parse_measure(measure_name);
        if (!user.empty()) request.user = UserId(user);
        if (!activity.empty()) request.activity = ActivityId(activity);
        request.idle_threshold = std::chrono::milliseconds(static_cast<long long>(idle_minutes * 60'000.0));
        request.group_by = group_by == "user"       ? analytics::GroupBy::user
                           : group_by == "activity" ? analytics::GroupBy::activity
                                                    : analytics::GroupBy::all;
        if (!config_file.empty()) request.exercises = web::ActivityRegistry::load_file(config_file).exercises;
        auto table = analytics::CategoryTable::defaults();
        if (!categories_file.empty()) {
            std::ifstream in(categories_file);
            table = json::parse(in).get<analytics::CategoryTable>();
        }
        std::ifstream in(export_file);
        const json result = analytics::run_analysis(telemetry::read_export(in), request, table);
        if (format == "json") {
            std::cout << result.dump(2) << '\n';
        } else {
            std::cout << analytics::render_report(result);
        }
    } catch (const std::exception& e) {
        std::cerr << "analyze: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
