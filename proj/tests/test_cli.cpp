#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fbmp/config.hpp"
#include "fbmp/io.hpp"
#include "fbmp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fbmp;

namespace {

const fs::path& scratch() {
    static const fs::path p = [] {
        auto d = fs::temp_directory_path() / ("fbmp_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

int run_cli(const std::string& args, const std::string& env = "") {
    std::string cmd = env + (env.empty() ? "" : " ") + "\"" FBMP_CLI_PATH "\" " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

io::Json small_config() {
    return io::Json::parse(R"({
      "label": "small_heat",
      "problem": {"x0": 0.0, "T": 1.0, "L": 5.0, "K": 25.0},
      "bundle": {"sigma": 1.0, "h": 0.0, "g": {"square": "x"}},
      "grid": {"dt": 0.01, "dx": 0.05},
      "simulation": {"M": 2000, "seed": 7, "block": 700, "persist_paths": 50},
      "regularity": {"M": 2000, "delta_steps": [1, 2, 4, 8], "t": 0.5, "T0": 0.5, "buckets": 4, "fit_steps": [2, 4, 8]},
      "functional": {"partition": [0.0, 0.5, 1.0], "g": "x1", "param_nodes": 11, "M": 1000,
                     "oracle_outer": 2000, "oracle_dt": 0.01}
    })");
}

fs::path write_config(const std::string& name, const io::Json& j) {
    auto p = scratch() / (name + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Contents of every output file except the manifest, which records timings.
std::map<std::string, std::string> outputs(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            m[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
    return m;
}

std::string args(const fs::path& cfg, const fs::path& out, const std::string& extra = "") {
    return "all --config \"" + cfg.string() + "\" --out \"" + out.string() + "\" " + extra;
}

}  // namespace

TEST(Cli, VanishingDiffusionFailsAtAudit) {
    auto out = scratch() / "vanishing";
    EXPECT_EQ(run_cli(args(fs::path(FBMP_CONFIG_DIR) / "sigma_vanishing.json", out)), 3);
    auto m = io::read_json(out / "manifest.json");
    EXPECT_EQ(m["exit_code"].get<int>(), 3);
    ASSERT_EQ(m["stages"].size(), 1u);
    EXPECT_EQ(m["stages"][0]["stage"].get<std::string>(), "audit");
    EXPECT_EQ(m["stages"][0]["status"].get<std::string>(), "error");
    EXPECT_TRUE(fs::exists(out / "audit.json"));
    EXPECT_TRUE(verify_manifest(out));
}

TEST(Cli, RerunIsByteIdentical) {
    auto cfg = write_config("small", small_config());
    auto a = scratch() / "rerun_a", b = scratch() / "rerun_b";
    int ra = run_cli(args(cfg, a)), rb = run_cli(args(cfg, b));
    EXPECT_EQ(ra, rb);
    EXPECT_NE(ra, 3);
    auto oa = outputs(a), ob = outputs(b);
    EXPECT_TRUE(oa.count("ensemble.csv") && oa.count("field.csv") && oa.count("fbmp_report.csv"));
    EXPECT_EQ(oa, ob);
}

TEST(Cli, ThreadsDoNotChangeOutputs) {
    auto cfg = write_config("small", small_config());
    auto a = scratch() / "threads_1", b = scratch() / "threads_3", c = scratch() / "threads_env";
    run_cli(args(cfg, a, "--threads 1"));
    run_cli(args(cfg, b, "--threads 3"));
    run_cli(args(cfg, c), "FBMP_THREADS=2");
    EXPECT_EQ(outputs(a), outputs(b));
    EXPECT_EQ(outputs(a), outputs(c));
    EXPECT_EQ(io::read_json(b / "manifest.json")["threads"].get<unsigned>(), 3u);
    EXPECT_EQ(io::read_json(c / "manifest.json")["threads"].get<unsigned>(), 2u);
}

TEST(Cli, ManifestCoversEveryFile) {
    auto cfg = write_config("small", small_config());
    auto out = scratch() / "manifest";
    run_cli(args(cfg, out));
    auto m = io::read_json(out / "manifest.json");
    EXPECT_EQ(m["files"].size(), outputs(out).size());
    EXPECT_EQ(m["config_hash"].get<std::string>().size(), 64u);
    std::string why;
    EXPECT_TRUE(verify_manifest(out, &why)) << why;
    std::ofstream(out / "field.csv", std::ios::app) << "tampered\n";
    EXPECT_FALSE(verify_manifest(out, &why));
    EXPECT_NE(why.find("field.csv"), std::string::npos);
}

TEST(Cli, SeedOverrideChangesPaths) {
    auto cfg = write_config("small", small_config());
    auto a = scratch() / "seed_a", b = scratch() / "seed_b";
    run_cli("simulate --config \"" + cfg.string() + "\" --out \"" + a.string() + "\"");
    run_cli("simulate --config \"" + cfg.string() + "\" --out \"" + b.string() + "\" --seed 8");
    EXPECT_NE(slurp(a / "ensemble.csv"), slurp(b / "ensemble.csv"));
    EXPECT_EQ(slurp(a / "field.csv"), slurp(b / "field.csv"));
}

TEST(Cli, StagesRunInOrder) {
    auto cfg = write_config("small", small_config());
    auto out = scratch() / "order";
    run_cli(args(cfg, out));
    auto m = io::read_json(out / "manifest.json");
    std::vector<std::string> names;
    for (auto& s : m["stages"]) names.push_back(s["stage"].get<std::string>());
    std::vector<std::string> want{"audit", "mollify", "solve", "simulate", "verify", "regularity", "cascade", "report"};
    EXPECT_EQ(names, want);
    EXPECT_TRUE(fs::exists(out / "summary.json"));
}

TEST(Cli, BadInvocations) {
    EXPECT_EQ(run_cli(""), 3);
    EXPECT_EQ(run_cli("all"), 3);
    EXPECT_EQ(run_cli("all --config /nonexistent.json"), 3);
    auto j = small_config();
    j["grid"]["dz"] = 1;
    auto bad = write_config("bad", j);
    EXPECT_EQ(run_cli(args(bad, scratch() / "bad")), 3);
}

TEST(Config, UnknownKeysAndCrossReferences) {
    auto j = small_config();
    EXPECT_NO_THROW(config::parse_config(j));
    j["surprise"] = 1;
    EXPECT_THROW(config::parse_config(j), ArgumentError);
    j = small_config();
    j["verify"] = {{"functionals", {"X_t", "nope"}}};
    EXPECT_THROW(config::parse_config(j), Error);
    j = small_config();
    j.erase("bundle");
    EXPECT_THROW(config::parse_config(j), ArgumentError);
    j = small_config();
    j["problem"]["K"] = 0.0;
    EXPECT_THROW(config::parse_config(j), ArgumentError);
}

TEST(Config, ShippedConfigsParse) {
    for (auto& e : fs::directory_iterator(FBMP_CONFIG_DIR)) {
        if (e.path().extension() != ".json" || e.path().stem() == "schema") continue;
        EXPECT_NO_THROW(config::load_config(e.path())) << e.path();
    }
}

namespace {

struct ScratchCleanup : ::testing::Environment {
    void TearDown() override { fs::remove_all(scratch()); }
};

const auto* const cleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

}  // namespace
