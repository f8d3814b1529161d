#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(GCVAE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("gcvae_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json smoke() {
  std::ifstream is(fs::path(GCVAE_CONFIG_DIR) / "smoke.json");
  return json::parse(is);
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("generate --out /tmp/x"), 2);
  EXPECT_EQ(run("train --config a --data b --out c --seed notanumber"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, BadConfigOrDataExitTwo) {
  const fs::path d = scratch("bad");
  std::ofstream(d / "broken.json") << "{ not json";
  EXPECT_EQ(run("generate --config " + q(d / "broken.json") + " --out " + q(d / "data")), 2);
  json j = smoke();
  j["unknown_key"] = 1;
  EXPECT_EQ(run("generate --config " + q(write_config(d, j)) + " --out " + q(d / "data")), 2);
  EXPECT_EQ(run("generate --config " + q(d / "missing.json") + " --out " + q(d / "data")), 2);
  const fs::path cfg = write_config(d, smoke());
  EXPECT_EQ(run("train --config " + q(cfg) + " --data " + q(d / "nodata") + " --out " + q(d / "run")), 2);
  EXPECT_EQ(run("eval --est " + q(d / "noest") + " --truth " + q(d / "nodata") + " --out " + q(d / "m.json")), 2);
}

TEST(Cli, DimensionMismatchExitsTwo) {
  const fs::path d = scratch("dims");
  json j = smoke();
  ASSERT_EQ(run("generate --config " + q(write_config(d, j)) + " --out " + q(d / "data")), 0);
  j["p"] = 6;
  EXPECT_EQ(run("train --config " + q(write_config(d, j)) + " --data " + q(d / "data") + " --out " + q(d / "run")), 2);
}

TEST(Cli, NonFiniteDataExitsThree) {
  const fs::path d = scratch("nan");
  const fs::path cfg = write_config(d, smoke());
  ASSERT_EQ(run("generate --config " + q(cfg) + " --out " + q(d / "data")), 0);
  {
    std::fstream f(d / "data" / "entity_0.bin", std::ios::in | std::ios::out | std::ios::binary);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    f.seekp(80);
    f.write(reinterpret_cast<const char*>(&nan), sizeof nan);
  }
  EXPECT_EQ(run("train --config " + q(cfg) + " --data " + q(d / "data") + " --out " + q(d / "run")), 3);
}

TEST(Cli, TrajectoryFileSize) {
  const fs::path d = scratch("size");
  json j = smoke();
  j["p"] = 10;
  j["T_long"] = 2100;
  ASSERT_EQ(run("generate --config " + q(write_config(d, j)) + " --out " + q(d / "data")), 0);
  for (int m = 0; m < 3; ++m)
    EXPECT_EQ(fs::file_size(d / "data" / ("entity_" + std::to_string(m) + ".bin")), 168000u);
  const json man = json::parse(slurp(d / "data" / "manifest.json"));
  EXPECT_EQ(man["version"], 1);
  EXPECT_EQ(man["dtype"], "f64le");
  EXPECT_EQ(man["entities"].size(), 3u);
}

TEST(Cli, PipelineIsByteReproducible) {
  const fs::path d = scratch("pipe");
  const fs::path cfg = write_config(d, smoke());
  for (const char* tag : {"a", "b"}) {
    const fs::path r = d / tag;
    ASSERT_EQ(run("generate --config " + q(cfg) + " --out " + q(r / "data")), 0);
    ASSERT_EQ(run("train --config " + q(cfg) + " --data " + q(r / "data") + " --out " + q(r / "run")), 0);
    ASSERT_EQ(run("infer --checkpoint " + q(r / "run" / "model.bin") + " --data " + q(r / "data") + " --out " +
                  q(r / "est")),
              0);
    ASSERT_EQ(run("eval --est " + q(r / "est") + " --truth " + q(r / "data") + " --out " + q(r / "metrics.json")), 0);
  }
  for (const char* f : {"data/entity_0.bin", "data/entity_2.bin", "data/common.csv", "data/manifest.json",
                        "run/model.bin", "run/loss.csv", "est/common_est.csv", "est/entity_1_est.csv",
                        "metrics.json"})
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;

  std::size_t n_est = 0;
  for (const auto& e : fs::directory_iterator(d / "a" / "est"))
    if (e.path().extension() == ".csv") ++n_est;
  EXPECT_EQ(n_est, 4u);  // common plus one per entity

  // a different seed changes the data
  ASSERT_EQ(run("generate --config " + q(cfg) + " --seed 8 --out " + q(d / "c")), 0);
  EXPECT_NE(slurp(d / "a" / "data" / "entity_0.bin"), slurp(d / "c" / "entity_0.bin"));
}

TEST(Cli, EvalOfTruthAgainstItselfIsPerfect) {
  const fs::path d = scratch("self");
  const fs::path cfg = write_config(d, smoke());
  ASSERT_EQ(run("generate --config " + q(cfg) + " --out " + q(d / "data")), 0);
  fs::create_directories(d / "est");
  fs::copy_file(d / "data" / "common.csv", d / "est" / "common_est.csv");
  for (int m = 0; m < 3; ++m)
    fs::copy_file(d / "data" / ("entity_" + std::to_string(m) + ".csv"),
                  d / "est" / ("entity_" + std::to_string(m) + "_est.csv"));
  ASSERT_EQ(run("eval --est " + q(d / "est") + " --truth " + q(d / "data") + " --out " + q(d / "m.json")), 0);
  const json m = json::parse(slurp(d / "m.json"));
  EXPECT_EQ(m["entity_macro"]["auroc"].get<double>(), 1.0);
  EXPECT_EQ(m["entity_macro"]["frobenius_error"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(d / "m.sweep.csv"));
}
