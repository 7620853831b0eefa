#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shadowlab/shadowlab.hpp"

using namespace shadowlab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is, "test.cfg");
}

int config_error_line(const std::string& text) {
    try {
        run_experiment(parse(text));
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

} // namespace

TEST(Config, ParsesSectionsCommentsAndLines) {
    const ExperimentConfig c = parse("# top\n[scenario]\nname = case1 ; trailing\nepsilon=0.4\n\n[pipeline]\nname = refute\n");
    EXPECT_EQ(c.scenario_name(), "case1");
    EXPECT_EQ(c.pipeline_name(), "refute");
    EXPECT_EQ(c.scenario.find("epsilon")->value, "0.4");
    EXPECT_EQ(c.scenario.find("epsilon")->line, 4);
    EXPECT_EQ(c.pipeline.line, 6);
}

TEST(Config, SyntaxErrorsCarryLineNumbers) {
    auto line_of = [](const std::string& text) {
        try {
            parse(text);
        } catch (const ConfigError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(line_of("[scenario]\nname = a\nname = b\n"), 3);
    EXPECT_EQ(line_of("x = 1\n"), 1);
    EXPECT_EQ(line_of("[scenario]\n[other]\n"), 2);
    EXPECT_EQ(line_of("[scenario]\njunk\n"), 2);
    EXPECT_EQ(line_of("[scenario\n"), 1);
    EXPECT_EQ(line_of("[pipeline]\n[pipeline]\n"), 2);
    EXPECT_EQ(line_of("[pipeline]\nname =\n"), 2);
}

TEST(Config, MissingSectionIsReported) {
    const ExperimentConfig c = parse("[pipeline]\nname = classify\n");
    try {
        c.scenario_name();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("section absent"), std::string::npos);
    }
}

TEST(Params, TypedValuesAndValidation) {
    const std::vector<ParamSpec> schema = {{"a", ParamKind::number, "1", 0, 10, ""},
                                           {"n", ParamKind::integer, "3", 1, 100, ""},
                                           {"v", ParamKind::vector, "", -1e9, 1e9, ""},
                                           {"s", ParamKind::text, "x", 0, 0, ""}};
    const ExperimentConfig c = parse("[pipeline]\nname = p\na = 2.5\nv = [1, -2, 3e-1]\n");
    const Params p(c.pipeline, schema, "p");
    EXPECT_DOUBLE_EQ(p.number("a"), 2.5);
    EXPECT_EQ(p.integer("n"), 3);
    EXPECT_EQ(p.text("s"), "x");
    EXPECT_DOUBLE_EQ(p.vector("v", 3)[2], 0.3);
    EXPECT_THROW(p.vector("v", 2), ConfigError);
    EXPECT_EQ(p.line("a"), 3);

    auto fails = [&](const std::string& body) {
        try {
            Params(parse("[pipeline]\nname = p\n" + body).pipeline, schema, "p");
        } catch (const ConfigError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(fails("a = 11\n"), 3);
    EXPECT_EQ(fails("a = nan\n"), 3);
    EXPECT_EQ(fails("n = 2.5\n"), 3);
    EXPECT_EQ(fails("n = -1\n"), 3);
    EXPECT_EQ(fails("zzz = 1\n"), 3);
    EXPECT_EQ(fails("v = 1, two\n"), 3);
}

TEST(Experiment, UnknownKeysAndNamesPointAtTheirLine) {
    EXPECT_EQ(config_error_line("[scenario]\nname = case1\nfoo = 1\n[pipeline]\nname = classify\n"), 3);
    EXPECT_EQ(config_error_line("[scenario]\nname = nope\n[pipeline]\nname = classify\n"), 2);
    EXPECT_EQ(config_error_line("[scenario]\nname = case1\n[pipeline]\nname = refute\nepsilon = 0.1\nwhat = 2\n"), 6);
    EXPECT_EQ(config_error_line("[scenario]\nname = saddle_cycle\n[pipeline]\nname = chain-graph\nregion_lo = 0,0\n"
                                "region_hi = 1,1,1\n"),
              5);
}

TEST(Experiment, RefuteCase1IsNegative) {
    const ExperimentResult r = run_experiment(
        parse("[scenario]\nname = case1\nepsilon = 0.4\n[pipeline]\nname = refute\nchain = case1\ndelta = 0.05\nepsilon = 0.05\n"));
    EXPECT_EQ(r.exit_code(), 2);
    EXPECT_EQ(r.report["outcome"], "negative");
    EXPECT_TRUE(r.report["refuted"].get<bool>());
    EXPECT_NEAR(r.report["lower_bound"].get<double>(), 0.1, 1e-9);
    EXPECT_TRUE(r.report["verification"]["verdict"].get<bool>());
}

TEST(Experiment, ClassifyUsesScenarioFacts) {
    const ExperimentResult r = run_experiment(parse("[scenario]\nname = saddle_cycle\n[pipeline]\nname = classify\n"));
    EXPECT_EQ(r.exit_code(), 0);
    EXPECT_EQ(r.scenario, "saddle_cycle");
    const std::string dump = r.report.dump();
    EXPECT_NE(dump.find("periodic"), std::string::npos);
}

TEST(Experiment, ChainGraphEmitsFilesAndOverrides) {
    const ExperimentConfig c = parse(
        "[scenario]\nname = linear_saddle3d\n[pipeline]\nname = chain-graph\nregion_lo = -1,-1,-1\nregion_hi = 1,1,1\n"
        "hgrid = 0.25\n");
    const ExperimentResult r = run_experiment(c, {std::nullopt, 2u});
    EXPECT_EQ(r.files.count("edges.txt"), 1u);
    EXPECT_EQ(r.files.count("cells.csv"), 1u);
    EXPECT_GT(r.report["chain_recurrent_cells"].get<std::size_t>(), 0u);
    EXPECT_FALSE(r.report["hgrid_below_delta"].get<bool>());
}

TEST(Experiment, SeriesCsvIsLongFormat) {
    const std::string csv = series_csv({{"a", 0, 0.5, 1.25}, {"b", 3, 1.0, -2.0}});
    EXPECT_EQ(csv, "series,k,t,value\na,0,0.5,1.25\nb,3,1,-2\n");
}

TEST(Experiment, ListsEveryPipeline) {
    const auto p = list_pipelines();
    EXPECT_EQ(p.size(), 7u);
    for (const auto& name : p) EXPECT_FALSE(describe_pipeline(name).empty());
    EXPECT_THROW(describe_pipeline("nope"), ConfigError);
}

TEST(Experiment, ShippedConfigsParse) {
    for (const auto& entry : fs::directory_iterator(SHADOWLAB_CONFIG_DIR)) {
        if (entry.path().extension() != ".cfg") continue;
        const ExperimentConfig c = load_config(entry.path().string());
        EXPECT_NO_THROW(detail::pipeline_info(c.pipeline_name())) << entry.path();
        EXPECT_NO_THROW(detail::load_scenario(c)) << entry.path();
    }
}

#ifdef SHADOWLAB_CLI_PATH
namespace {

int cli(const std::string& args) {
    const std::string cmd = std::string("\"") + SHADOWLAB_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, ExitCodesAndOutputs) {
    const fs::path out = fs::temp_directory_path() / "shadowlab_cli_test";
    fs::remove_all(out);
    const std::string cfg = std::string(SHADOWLAB_CONFIG_DIR) + "/refute_case1.cfg";
    EXPECT_EQ(cli("--out " + out.string() + " run " + cfg), 2);
    EXPECT_TRUE(fs::exists(out / "report.json"));
    EXPECT_TRUE(fs::exists(out / "series.csv"));
    EXPECT_TRUE(fs::exists(out / "meta.json"));
    std::ifstream meta(out / "meta.json");
    const Json m = Json::parse(meta);
    EXPECT_EQ(m["exit_code"], 2);
    EXPECT_EQ(m["pipeline"], "refute");

    EXPECT_EQ(cli("--out " + out.string() + " run " + std::string(SHADOWLAB_CONFIG_DIR) + "/classify_saddle_cycle.cfg"), 0);
    EXPECT_EQ(cli("run /nonexistent.cfg"), 1);
    EXPECT_EQ(cli("list scenarios"), 0);
    EXPECT_EQ(cli("list pipelines"), 0);
    EXPECT_EQ(cli("list nonsense"), 1);
    EXPECT_EQ(cli(""), 1);

    const fs::path bad = out / "bad.cfg";
    std::ofstream(bad) << "[scenario]\nname = case1\n[pipeline]\nname = refute\nepsilon = -1\n";
    EXPECT_EQ(cli("--out " + out.string() + " run " + bad.string()), 1);
    fs::remove_all(out);
}
#endif
