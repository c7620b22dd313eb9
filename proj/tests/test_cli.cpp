#include "cilab/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace cilab;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("cilab_cli_" + name);
    std::filesystem::remove_all(p);
    return p;
}

json small_iterate() {
    return json::parse(R"({
      "mode": "iterate",
      "seed": 3,
      "grid": {"N": 16, "L": 1.0},
      "times": {"start": 0.0, "end": 1.0, "slices": 5},
      "pressure": {"a": 0.5, "gamma": 2.0},
      "B": "J",
      "ansatz": {"kind": "piecewise_constant", "layout": "halves", "densities": [1.0, 2.0], "chi": 2.0},
      "iteration": {"max_stages": 2},
      "verify": {"constraint": false}
    })");
}

std::string config_error(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST(Config, DefaultsAndMatrixNames) {
    const RunConfig c = parse_config(small_iterate());
    EXPECT_EQ(c.mode, "iterate");
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.iteration.seed, 3u);
    EXPECT_EQ(c.grid.N, 16);
    ASSERT_EQ(c.times.size(), 5u);
    EXPECT_DOUBLE_EQ(c.times[2], 0.5);
    EXPECT_EQ(c.B(0, 1), 1.0);
    EXPECT_EQ(c.B(1, 0), -1.0);
    EXPECT_EQ(c.iteration.max_stages, 2);
    EXPECT_EQ(c.iteration.test_gradient_bounds.size(), 3u);
}

TEST(Config, SchemaErrorsCarryJsonPointers) {
    json j = small_iterate();
    j["iteration"]["kapa"] = 1e-12;
    EXPECT_EQ(config_error(j), "/iteration/kapa: unknown key");
    j = small_iterate();
    j["grid"]["N"] = "big";
    EXPECT_EQ(config_error(j), "/grid/N: expected an integer");
    j = small_iterate();
    j["grid"]["N"] = 48;
    EXPECT_EQ(config_error(j), "/grid/N: expected a power of two");
    j = small_iterate();
    j["B"] = "K";
    EXPECT_EQ(config_error(j).rfind("/B: ", 0), 0u);
    j = small_iterate();
    j["times"] = {0.0, 0.5, 0.5};
    EXPECT_EQ(config_error(j), "/times/2: times must increase");
    j = small_iterate();
    j["ansatz"]["densities"] = {1.0, -2.0};
    EXPECT_EQ(config_error(j), "/ansatz/densities/1: expected a positive number");
    j = small_iterate();
    j["ansatz"]["densities"] = {1.0};
    EXPECT_EQ(config_error(j).rfind("/ansatz/densities: ", 0), 0u);
    j = small_iterate();
    j["iteration"]["kappa"] = 2.0;
    EXPECT_EQ(config_error(j).rfind("/iteration: ", 0), 0u);
    j = small_iterate();
    j["mode"] = "verify";
    EXPECT_EQ(config_error(j), "/dump: verify mode needs a dump directory");
    j = small_iterate();
    j["mode"] = "plot";
    EXPECT_EQ(config_error(j).rfind("/mode: expected one of", 0), 0u);
}

TEST(Config, OverridesApply) {
    RunConfig c = parse_config(small_iterate());
    RunOverrides o;
    o.seed = 9;
    o.threads = 2;
    o.stages = 5;
    o.quad_refine = 3;
    apply_overrides(c, o);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.iteration.seed, 9u);
    EXPECT_EQ(c.iteration.threads, 2);
    EXPECT_EQ(c.iteration.max_stages, 5);
    EXPECT_EQ(c.iteration.quad_refine, 3);
    o = RunOverrides{};
    o.quad_refine = 0;
    EXPECT_THROW(apply_overrides(c, o), ConfigError);
}

TEST(Run, GeometryModeListsFivePoints) {
    const RunConfig c = parse_config(json::parse(R"({"mode": "geometry", "geometry": {"rho": 1.0, "q": 1.5}})"));
    const auto out = scratch("geometry");
    std::ostringstream log;
    EXPECT_EQ(run(c, out, log), 0);
    const auto g = json::parse(slurp(out / "geometry.json"));
    EXPECT_EQ(g["points"].size(), 5u);
    EXPECT_GT(g["slack"].get<double>(), 0.0);
    EXPECT_NE(log.str().find("LP slack"), std::string::npos);
}

TEST(Run, IterateWritesContractingStagesAndIsDeterministic) {
    const RunConfig c = parse_config(small_iterate());
    const auto a = scratch("iter_a"), b = scratch("iter_b");
    std::ostringstream log;
    ASSERT_EQ(run(c, a, log), 0) << log.str();
    RunConfig c2 = c;
    RunOverrides o;
    o.threads = 2;
    apply_overrides(c2, o);
    ASSERT_EQ(run(c2, b, log), 0);

    std::ifstream csv(a / "stages.csv");
    std::string header, line;
    std::getline(csv, header);
    EXPECT_EQ(header.rfind("stage,eps_target,dist_before_d1,dist_integral", 0), 0u);
    std::vector<double> dist;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string cell;
        for (int i = 0; i < 4; ++i) std::getline(ss, cell, ',');
        dist.push_back(std::stod(cell));
    }
    ASSERT_EQ(dist.size(), 2u);
    EXPECT_LT(dist[1], dist[0]);

    const auto ma = json::parse(slurp(a / "manifest.json"));
    const auto mb = json::parse(slurp(b / "manifest.json"));
    EXPECT_EQ(ma["files"], mb["files"]);
    EXPECT_EQ(ma["seed"], 3);
    EXPECT_EQ(ma["version"], kVersion);
    EXPECT_EQ(ma["config"], small_iterate());
    EXPECT_TRUE(ma["files"].contains("fields/index.json"));
    EXPECT_TRUE(std::filesystem::exists(a / "census.json"));
    EXPECT_TRUE(std::filesystem::exists(a / "ansatz" / "index.json"));
    EXPECT_EQ(slurp(a / "fields" / "m_002.bin"), slurp(b / "fields" / "m_002.bin"));

    const auto rerun = scratch("iter_c");
    ASSERT_EQ(run(c, rerun, log), 0);
    EXPECT_EQ(file_hash(a / "manifest.json"), file_hash(rerun / "manifest.json"));
}

TEST(Run, SeedChangesDumps) {
    RunConfig c = parse_config(small_iterate());
    const auto a = scratch("seed_a"), b = scratch("seed_b");
    std::ostringstream log;
    ASSERT_EQ(run(c, a, log), 0);
    RunOverrides o;
    o.seed = 4;
    apply_overrides(c, o);
    ASSERT_EQ(run(c, b, log), 0);
    EXPECT_NE(file_hash(a / "fields" / "m_002.bin"), file_hash(b / "fields" / "m_002.bin"));
}

TEST(Run, InfeasibleAnsatzExitsNonzero) {
    json j = json::parse(R"({
      "mode": "ansatz",
      "grid": {"N": 16},
      "times": {"start": 0.0, "end": 1.0, "slices": 5},
      "B": "-I",
      "ansatz": {"kind": "perturbed_density", "density": {"mean": 1.0, "modes": [{"k": [1, 0], "amplitude": 0.05}]},
                 "eps": 1e-3}
    })");
    const auto out = scratch("infeasible");
    std::ostringstream log;
    EXPECT_EQ(run(parse_config(j), out, log), 3);
    const auto m = json::parse(slurp(out / "manifest.json"));
    EXPECT_TRUE(m["certificates"].contains("error"));
}

TEST(Run, VerifyModeReadsDumps) {
    const auto src = scratch("verify_src");
    std::ostringstream log;
    json j = small_iterate();
    j["mode"] = "ansatz";
    ASSERT_EQ(run(parse_config(j), src, log), 0);
    json v = json::parse(R"({"mode": "verify", "verify": {"constraint": false}})");
    v["dump"] = (src / "fields").string();
    const auto out = scratch("verify_out");
    EXPECT_EQ(run(parse_config(v), out, log), 0);
    const auto r = json::parse(slurp(out / "verify.json"));
    EXPECT_TRUE(r["pass"].get<bool>());
    EXPECT_EQ(r["weak"].size(), 12u);
}

TEST(Binary, ConfigErrorExitCodeAndMessage) {
    const auto dir = scratch("binary");
    std::filesystem::create_directories(dir);
    json j = small_iterate();
    j["grid"]["M"] = 3;
    std::ofstream(dir / "bad.json") << j.dump();
    const std::string cmd = std::string(CILAB_CLI_PATH) + " --config " + (dir / "bad.json").string() + " --out " +
                            (dir / "out").string() + " 2> " + (dir / "err.txt").string();
    const int rc = std::system(cmd.c_str());
    EXPECT_EQ(WEXITSTATUS(rc), 2);
    EXPECT_NE(slurp(dir / "err.txt").find("/grid/M: unknown key"), std::string::npos);
}
