// Experiment runner: `run <config>`, `list scenarios`, `list pipelines`.
// Exit codes: 0 positive outcome, 2 analysis-negative verdict, 1 error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "shadowlab/shadowlab.hpp"

namespace fs = std::filesystem;
using namespace shadowlab;

namespace {

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << content;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

int run(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
        std::optional<unsigned> threads) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string started = utc_now();
    const ExperimentConfig cfg = load_config(config_path);
    const ExperimentResult r = run_experiment(cfg, {seed, threads});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "report.json", r.report.dump(2) + "\n");
    write_file(fs::path(out_dir) / "series.csv", series_csv(r.series));
    for (const auto& [name, content] : r.files) write_file(fs::path(out_dir) / name, content);
    Json meta = {{"tool", "shadowlab"},
                 {"version", kVersion},
                 {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                               std::to_string(EIGEN_MINOR_VERSION)},
                 {"compiler", __VERSION__},
                 {"config", config_path},
                 {"scenario", r.scenario},
                 {"pipeline", r.pipeline},
                 {"seed", r.seed},
                 {"threads", threads ? Json(*threads) : Json(nullptr)},
                 {"started_utc", started},
                 {"timings", {{"total_seconds", seconds}}},
                 {"exit_code", r.exit_code()}};
    write_file(fs::path(out_dir) / "meta.json", meta.dump(2) + "\n");
    std::cout << r.pipeline << " on " << r.scenario << ": "
              << (r.outcome == Outcome::positive ? "positive" : "negative") << " (" << out_dir << ")\n";
    return r.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"shadowlab: shadowing, splittings and chain recurrence for flows"};
    app.require_subcommand(1);
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--seed", seed, "override the pipeline seed");
    app.add_option("--threads", threads, "override the pipeline worker count");

    auto* run_cmd = app.add_subcommand("run", "run an experiment config");
    std::string config;
    run_cmd->add_option("config", config, "config file")->required();
    run_cmd->fallthrough();

    auto* list_cmd = app.add_subcommand("list", "list scenarios or pipelines");
    std::string what;
    list_cmd->add_option("what", what, "scenarios | pipelines")->required()->check(CLI::IsMember({"scenarios", "pipelines"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*list_cmd) {
            if (what == "scenarios") {
                for (const auto& s : list_scenarios()) std::cout << s << '\n';
            } else {
                for (const auto& p : list_pipelines()) std::cout << p << "  " << describe_pipeline(p) << '\n';
            }
            return 0;
        }
        return run(config, out_dir, seed, threads);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << (config.empty() ? "" : config + ": ") << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return 1;
}
