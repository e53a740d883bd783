#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "synthaug/experiments.hpp"

using namespace synthaug;
namespace fs = std::filesystem;

namespace {

/** Fresh scratch directory per test. */
std::string scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("synthaug_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run(const std::string& cmd, const json& cfg, const std::string& dir, std::uint64_t seed = 1,
        std::string* err_out = nullptr) {
    RunOptions o;
    o.seed = seed;
    o.seed_given = true;
    o.out_dir = dir;
    std::ostringstream err;
    int code = run_command(cmd, cfg, o, err);
    if (err_out) *err_out = err.str();
    return code;
}

json tiny_world() {
    return {{"d", 12}, {"r", 2}, {"n_subjects", 2}, {"n_functions", 2}, {"hidden", 4}, {"sup_samples", 500}};
}

}  // namespace

TEST(Compare, SingleMethodSingleRatioGivesOneRow) {
    auto dir = scratch("one_row");
    json cfg{{"dataset", "craft"}, {"ratios", {2}}, {"seeds", 1}, {"methods", {"raw"}}, {"craft_n", 2000}};
    ASSERT_EQ(run("oversample-compare", cfg, dir), kExitOk);
    auto t = load_versioned_csv(dir + "/results.csv", "oversample_compare");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.header.size(), 10u);
    EXPECT_EQ(t.rows[0][3], "raw");
    EXPECT_EQ(t.rows[0][2], "200");
}

TEST(Compare, RowCountIsMethodsTimesRatiosTimesSeeds) {
    json cfg{{"dataset", "dgp-tokens"}, {"ratios", {1, 2}}, {"seeds", 2}, {"n_min", 6},
             {"methods", {"raw", "ros", "smote", "adasyn", "oracle_llm", "tf_gen"}}, {"k", 3},
             {"world", tiny_world()}, {"filter", {{"min_subject", 0.0}, {"min_function", 0.0}}},
             {"test_per_label", 50}, {"stationarity_tol", 1e-6}};
    auto rows = oversample_compare(read_compare(cfg), 3);
    EXPECT_EQ(rows.size(), 6u * 2u * 2u);
    // Generator methods contribute one row per augmentation size.
    cfg["N"] = {0, 4};
    rows = oversample_compare(read_compare(cfg), 3);
    EXPECT_EQ(rows.size(), (4u + 2u * 2u) * 2u * 2u);
    for (auto& r : rows) {
        EXPECT_TRUE(std::isfinite(r.balanced) && r.balanced >= 0.0);  // balanced cross-entropy
        if (r.ratio == 1.0 && !is_generator_method(r.method)) {
            EXPECT_EQ(r.alpha, 0.0);
        }
    }
}

TEST(Compare, ConfigErrorsExitWithTwo) {
    auto dir = scratch("bad");
    std::string err;
    EXPECT_EQ(run("oversample-compare", {{"methods", {"magic"}}}, dir, 1, &err), kExitConfig);
    EXPECT_NE(err.find("unknown method magic"), std::string::npos);
    EXPECT_EQ(run("oversample-compare", {{"methods", {"tf_gen"}}}, dir), kExitConfig);
    EXPECT_EQ(run("oversample-compare", {{"dataset", "csv"}, {"methods", {"oracle_llm"}}, {"csv_path", "x"}}, dir),
              kExitConfig);
    EXPECT_EQ(run("oversample-compare", {{"ratios", {0.5}}}, dir), kExitConfig);
    EXPECT_EQ(run("oversample-compare", {{"colour", "red"}}, dir), kExitConfig);
    EXPECT_EQ(run("oversample-compare", {{"fit", {{"tolerance", 1}}}}, dir), kExitConfig);
    EXPECT_EQ(run("scaling-gauss", {{"grid", {64}}}, dir), kExitConfig);
    EXPECT_EQ(run("scaling-gauss", {{"grid", {64, 128, 128}}}, dir), kExitConfig);
    EXPECT_EQ(run("scaling-gauss", {{"lambda", "sometimes"}}, dir), kExitConfig);
    EXPECT_EQ(run("tf-kl", {{"n_grid", json::array()}}, dir), kExitConfig);
    EXPECT_EQ(run("craft-gen", {{"format", "xml"}}, dir), kExitConfig);
    EXPECT_EQ(run("craft-gen", json::array(), dir), kExitConfig);
    EXPECT_EQ(run("nope", json::object(), dir), kExitConfig);
    EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Compare, UnusableInputsAreConfigErrors) {
    auto dir = scratch("inputs");
    json cfg{{"dataset", "csv"}, {"csv_path", dir + "/missing.csv"}, {"methods", {"raw"}}};
    EXPECT_EQ(run("oversample-compare", cfg, dir), kExitConfig);
    json fourier{{"q_max", 2}, {"grid", {64, 128, 256}}, {"replicates", 10}};
    EXPECT_EQ(run("scaling-fourier", fourier, dir), kExitConfig);
}

TEST(Compare, UnwritableOutputExitsWithThree) {
    auto dir = scratch("unwritable");
    {
        std::ofstream f(dir + "/blocker");
        f << "x";
    }
    std::string err;
    EXPECT_EQ(run("craft-gen", {{"n", 10}}, dir + "/blocker/out", 1, &err), kExitRuntime);
    EXPECT_NE(err.find("runtime error"), std::string::npos);
}

TEST(Reproducibility, SameConfigAndSeedGiveIdenticalBytes) {
    json cfg{{"dataset", "craft"}, {"ratios", {1, 3}}, {"seeds", 2}, {"methods", {"raw", "ros", "smote", "oracle_llm"}},
             {"N", {0, 50}}, {"craft_n", 2000}};
    auto a = scratch("rep_a"), b = scratch("rep_b"), c = scratch("rep_c");
    ASSERT_EQ(run("oversample-compare", cfg, a, 11), kExitOk);
    ASSERT_EQ(run("oversample-compare", cfg, b, 11), kExitOk);
    ASSERT_EQ(run("oversample-compare", cfg, c, 12), kExitOk);
    EXPECT_EQ(slurp(a + "/results.csv"), slurp(b + "/results.csv"));
    EXPECT_NE(slurp(a + "/results.csv"), slurp(c + "/results.csv"));

    RunOptions par;
    par.seed = 11;
    par.seed_given = true;
    par.jobs = 3;
    par.out_dir = scratch("rep_par");
    std::ostringstream err;
    ASSERT_EQ(run_command("oversample-compare", cfg, par, err), kExitOk);
    EXPECT_EQ(slurp(a + "/results.csv"), slurp(par.out_dir + "/results.csv"));
}

TEST(Reproducibility, SeedPrecedenceAndHash) {
    auto a = scratch("seed_a"), b = scratch("seed_b");
    RunOptions o;
    o.out_dir = a;
    std::ostringstream err;
    ASSERT_EQ(run_command("craft-gen", {{"n", 50}, {"seed", 4}}, o, err), kExitOk);
    ASSERT_EQ(run("craft-gen", {{"n", 50}, {"seed", 9}}, b, 4), kExitOk);
    // A seed given on the command line replaces the one in the file, so both runs are identical.
    EXPECT_EQ(slurp(a + "/craft.csv"), slurp(b + "/craft.csv"));
    auto first = slurp(a + "/craft.csv").substr(0, slurp(a + "/craft.csv").find('\n'));
    auto p = parse_provenance(first);
    EXPECT_EQ(p.schema, "craft");
    EXPECT_EQ(p.config_hash, config_hash(json{{"n", 50}, {"seed", 4}}));
    auto ds = load_dataset_csv(a + "/craft.csv", "Y");
    EXPECT_EQ(ds.rows(), 50u);
}

TEST(Versioning, LoadersRejectUnknownSchemasAndVersions) {
    EXPECT_NO_THROW(parse_provenance("# schema=kl_curve_v1 config_hash=abc build=x"));
    EXPECT_THROW(parse_provenance("# schema=kl_curve_v2 config_hash=abc build=x"), ParseError);
    EXPECT_THROW(parse_provenance("# schema=mystery_v1 config_hash=abc"), ParseError);
    EXPECT_THROW(parse_provenance("# schema=kl_curve config_hash=abc"), ParseError);
    EXPECT_THROW(parse_provenance("ratio,n_min"), ParseError);
    std::istringstream wrong("# schema=kl_curve_v1 config_hash=a build=b\nn\n1\n");
    EXPECT_THROW(read_versioned_csv(wrong, "oversample_compare"), ParseError);
    std::istringstream ragged("# schema=kl_curve_v1 config_hash=a build=b\nn,kl\n1\n");
    EXPECT_THROW(read_versioned_csv(ragged, "kl_curve"), ParseError);
    auto dir = scratch("version");
    {
        std::ofstream f(dir + "/q.json");
        f << json{{"schema", "quality_v7"}}.dump();
    }
    EXPECT_THROW(load_versioned_json(dir + "/q.json", "quality"), ParseError);
}

TEST(Great, CraftGenWritesGreatRecords) {
    auto dir = scratch("great");
    ASSERT_EQ(run("craft-gen", {{"n", 20}, {"format", "great"}}, dir), kExitOk);
    std::ifstream in(dir + "/craft.txt");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(parse_provenance(line).schema, "craft_great");
    std::vector<std::string> recs;
    while (std::getline(in, line)) recs.push_back(line);
    EXPECT_EQ(recs.size(), 20u);
    EXPECT_NO_THROW(deserialize_great(recs));
}

TEST(Scaling, GaussCommandWritesCurveAndSummary) {
    auto dir = scratch("gauss");
    json cfg{{"J", 64}, {"grid", {64, 256, 1024}}, {"replicates", 10}};
    ASSERT_EQ(run("scaling-gauss", cfg, dir), kExitOk);
    auto t = load_versioned_csv(dir + "/curve.csv", "scaling_curve");
    EXPECT_EQ(t.rows.size(), 30u);
    auto s = load_versioned_json(dir + "/summary.json", "scaling_summary");
    EXPECT_LT(s["slope"].get<double>(), 0.0);
    EXPECT_EQ(s["points"].size(), 3u);
    EXPECT_TRUE(s["points"][0].contains("excess_misclass"));
    cfg["vary"] = "n_tot";
    ASSERT_EQ(run("scaling-gauss", cfg, dir), kExitOk);
    EXPECT_FALSE(load_versioned_json(dir + "/summary.json", "scaling_summary")["points"][0].contains("excess_misclass"));
}

TEST(Kl, SingletonWorldCommand) {
    auto dir = scratch("kl");
    json world = tiny_world();
    world["n_subjects"] = 1;
    world["n_functions"] = 1;
    json cfg{{"world", world}, {"filter", {{"min_subject", 0.0}, {"min_function", 0.0}}}, {"n_grid", {1, 4}},
             {"replicates", 2}};
    ASSERT_EQ(run("tf-kl", cfg, dir), kExitOk);
    auto t = load_versioned_csv(dir + "/kl.csv", "kl_curve");
    ASSERT_EQ(t.rows.size(), 4u);
    for (auto& row : t.rows) EXPECT_LT(std::stod(row[2]), 1e-9);
    auto s = load_versioned_json(dir + "/kl_summary.json", "kl_summary");
    EXPECT_EQ(s["summary"].size(), 2u);
}

TEST(Quality, CommandAgreesWithMonteCarlo) {
    auto dir = scratch("quality");
    ASSERT_EQ(run("quality", {{"mc_samples", 20000}}, dir), kExitOk);
    auto j = load_versioned_json(dir + "/quality.json", "quality");
    for (auto& [g, z] : j["agreement_z"].items()) EXPECT_LT(std::abs(z.get<double>()), 3.0) << g;
    EXPECT_NEAR(j["rho"]["1"].get<double>(), 0.0, 0.0);
    EXPECT_EQ(run("quality", {{"loss", "hinge"}}, dir), kExitConfig);
    EXPECT_EQ(run("quality", {{"counts", {1}}}, dir), kExitConfig);
}

#ifdef SYNTHAUG_CLI_PATH
TEST(Binary, ExitCodes) {
    auto dir = scratch("binary");
    auto sh = [&](const std::string& args) {
        int s = std::system((std::string(SYNTHAUG_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(s);
    };
    {
        std::ofstream f(dir + "/bad.json");
        f << R"({"methods": ["nope"]})";
    }
    {
        std::ofstream f(dir + "/good.json");
        f << R"({"n": 10})";
    }
    EXPECT_EQ(sh("oversample-compare --config " + dir + "/bad.json --out " + dir), 2);
    EXPECT_EQ(sh("craft-gen --config " + dir + "/good.json --seed 3 --out " + dir), 0);
    EXPECT_EQ(sh("craft-gen --jobs 0 --out " + dir), 2);
    EXPECT_EQ(sh("craft-gen --config " + dir + "/absent.json --out " + dir), 2);
    EXPECT_EQ(sh("--version"), 0);
}
#endif
