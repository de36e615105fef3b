#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "panelqmle/cli.hpp"
#include "panelqmle/io.hpp"

using namespace panelqmle;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("panelqmle_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("PANELQMLE_SEED");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string file(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const std::string& name, const std::string& body) const {
    std::ofstream(file(name)) << body;
    return file(name);
  }

  int run(std::vector<std::string> args) const {
    args.insert(args.begin(), "panelqmle");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }

  static nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(read_text(path)); }

  fs::path dir_;
};

const char* kSmall = R"({
  "N": 5, "T": 4, "alpha": 0.5,
  "factors": [1.0],
  "sigma2": 1.0,
  "seed": 42
})";

}  // namespace

TEST_F(CliTest, SimulateWritesPanelAndTruth) {
  const std::string cfg = write_config("c.json", kSmall);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("a")}), 0);
  const PanelData d = read_panel_csv(file("a/panel.csv"));
  EXPECT_EQ(d.N(), 5);
  EXPECT_EQ(d.T(), 4);
  const nlohmann::json truth = read_json(file("a/truth.json"));
  EXPECT_EQ(truth["lambda"].size(), 5u);
  EXPECT_EQ(truth["theta0"]["sigma2"].size(), 4u);
  const nlohmann::json man = read_json(file("a/manifest.json"));
  EXPECT_EQ(man["seed"], 42);
  EXPECT_EQ(man["seed_source"], "config");
  EXPECT_EQ(man["tool_version"], tool_version());
  for (const auto& art : man["artifacts"]) {
    EXPECT_EQ(art["sha256"], sha256_file(file("a/" + art["path"].get<std::string>())));
  }
}

TEST_F(CliTest, RerunIsByteIdentical) {
  const std::string cfg = write_config("c.json", kSmall);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("a")}), 0);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("b")}), 0);
  for (const char* name : {"panel.csv", "truth.json"}) {
    EXPECT_EQ(read_text(file(std::string("a/") + name)), read_text(file(std::string("b/") + name)));
  }
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("c"), "--seed", "7"}), 0);
  EXPECT_NE(read_text(file("a/panel.csv")), read_text(file("c/panel.csv")));
  EXPECT_EQ(read_json(file("c/manifest.json"))["seed_source"], "flag");
}

TEST_F(CliTest, EnvironmentSeedOverridesConfig) {
  const std::string cfg = write_config("c.json", kSmall);
  setenv("PANELQMLE_SEED", "9", 1);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("a")}), 0);
  unsetenv("PANELQMLE_SEED");
  const nlohmann::json man = read_json(file("a/manifest.json"));
  EXPECT_EQ(man["seed"], 9);
  EXPECT_EQ(man["seed_source"], "env");
}

TEST_F(CliTest, MissingAlphaNamesTheField) {
  const std::string cfg = write_config("c.json", "{\n  \"N\": 5,\n  \"T\": 4\n}\n");
  ::testing::internal::CaptureStderr();
  const int code = run({"simulate", "--config", cfg, "--out", file("a")});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("alpha"), std::string::npos);
}

TEST_F(CliTest, MalformedConfigReportsLine) {
  const std::string cfg = write_config("c.json", "{\n  \"N\": 5,\n  \"T\": ,\n}\n");
  ::testing::internal::CaptureStderr();
  const int code = run({"simulate", "--config", cfg, "--out", file("a")});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("3"), std::string::npos);
}

TEST_F(CliTest, UnknownOptionIsConfigError) {
  ::testing::internal::CaptureStderr();
  ::testing::internal::CaptureStdout();
  EXPECT_EQ(run({"simulate", "--bogus"}), 2);
  ::testing::internal::GetCapturedStdout();
  ::testing::internal::GetCapturedStderr();
}

TEST_F(CliTest, EstimateRoundTrip) {
  const std::string cfg = write_config("c.json", R"({"N": 300, "T": 6, "alpha": 0.4, "factors": [1.0], "seed": 3})");
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("sim")}), 0);
  ASSERT_EQ(run({"estimate", "--data", file("sim/panel.csv"), "--r", "1", "--out", file("est")}), 0);
  const nlohmann::json fit = read_json(file("est/fit.json"));
  EXPECT_NEAR(fit["alpha_hat"].get<double>(), 0.4, 0.15);
  EXPECT_TRUE(fit["convergence"]["converged"].get<bool>());
  EXPECT_EQ(fit["sigma2"].size(), 6u);
  EXPECT_TRUE(fs::exists(file("est/factors.csv")));
  EXPECT_TRUE(fs::exists(file("est/manifest.json")));
}

TEST_F(CliTest, EstimateRejectsTooManyFactors) {
  const std::string cfg = write_config("c.json", kSmall);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", file("sim")}), 0);
  ::testing::internal::CaptureStderr();
  const int code = run({"estimate", "--data", file("sim/panel.csv"), "--r", "3", "--out", file("est")});
  ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
}

TEST_F(CliTest, BoundAtLongPanel) {
  const std::string cfg = write_config("b.json", R"({"T": 500, "alpha": 0.5, "factors": [1.0], "sigma2": 1.0})");
  ::testing::internal::CaptureStdout();
  ASSERT_EQ(run({"bound", "--config", cfg, "--out", file("b")}), 0);
  const std::string out = ::testing::internal::GetCapturedStdout();
  EXPECT_NE(out.find("bound_alpha_ellinf"), std::string::npos);
  const nlohmann::json j = read_json(file("b/bound.json"));
  EXPECT_LT(std::abs(j["bound_alpha_ellinf"].get<double>() - 0.75) / 0.75, 0.01);
  EXPECT_LE(j["bound_alpha_ell2"].get<double>(), j["bound_alpha_ellinf"].get<double>());
}

TEST_F(CliTest, MonteCarloSummary) {
  const std::string cfg =
      write_config("m.json", R"({"N": 300, "T": 5, "alpha": 0.4, "factors": [1.0], "seed": 11, "reps": 50})");
  ASSERT_EQ(run({"mc", "--config", cfg, "--out", file("m"), "--jobs", "2"}), 0);
  const nlohmann::json s = read_json(file("m/summary.json"));
  EXPECT_GE(s["coverage_95"].get<double>(), 0.0);
  EXPECT_LE(s["coverage_95"].get<double>(), 1.0);
  EXPECT_EQ(s["reps"], 50);
  EXPECT_TRUE(fs::exists(file("m/replications.csv")));
  const nlohmann::json man = read_json(file("m/manifest.json"));
  EXPECT_EQ(man["reps"], 50);
  ASSERT_EQ(run({"mc", "--config", cfg, "--out", file("m2"), "--jobs", "1"}), 0);
  EXPECT_EQ(read_text(file("m/replications.csv")), read_text(file("m2/replications.csv")));
}

TEST(Sha256, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
