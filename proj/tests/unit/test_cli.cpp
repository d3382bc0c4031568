#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "comap/cli.hpp"
#include "test_util.hpp"

namespace comap {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + COMAP_CLI_PATH + "\" " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  }
  return files;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

void write_small_spec(const fs::path& path) {
  const json spec = {
      {"width", 40},
      {"height", 30},
      {"fov_deg", 60},
      {"seed", 4},
      {"noise_px", 0.2},
      {"dropout", 0.1},
      {"depth_scale", 1.7},
      {"sparse_stride", 4},
      {"rig", {{"type", "forward_facing"}, {"views", 3}, {"baseline", 0.4}}},
      {"surfaces",
       {{{"type", "plane"}, {"point", {0, 0, 4}}, {"normal", {0, 0, -1}}},
        {{"type", "sphere"}, {"center", {0.3, 0.1, 2.5}}, {"radius", 0.5}}}}};
  std::ofstream(path) << spec.dump(2);
}

TEST(RunConfig, DefaultsOverridesAndValidation) {
  const cli::RunConfig d;
  EXPECT_EQ(d.kernel_radius, 1);
  EXPECT_DOUBLE_EQ(d.gate_px, 2.0);
  EXPECT_DOUBLE_EQ(d.lambda, 0.2);
  EXPECT_EQ(d.iterations, 1000u);

  const cli::RunConfig c = cli::config_from_json(
      {{"gate_px", 3.5}, {"epsilon", 0.01}, {"seed", 9}, {"threads", 2}, {"with_offset", false}});
  EXPECT_DOUBLE_EQ(c.gate_px, 3.5);
  EXPECT_EQ(c.epsilon, 0.01);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.threads, 2);
  EXPECT_FALSE(c.with_offset);
  EXPECT_EQ(cli::config_from_json({{"lambda", 0.5}}, c).gate_px, 3.5);
  c.validate();

  const json j = cli::config_to_json(c);
  EXPECT_FALSE(j.contains("threads"));
  EXPECT_EQ(cli::config_to_json(cli::config_from_json(j)), j);

  EXPECT_COMAP_ERROR(cli::config_from_json({{"gate_pixels", 1}}), kInvalidArgument);
  EXPECT_COMAP_ERROR(cli::config_from_json({{"gate_px", -1}}).validate(), kInvalidArgument);
  EXPECT_COMAP_ERROR(cli::config_from_json({{"lambda", 2}}).validate(), kInvalidArgument);
  EXPECT_COMAP_ERROR(cli::config_from_json({{"threshold", 1.5}}).validate(), kInvalidArgument);
  EXPECT_COMAP_ERROR(cli::config_from_json({{"kernel_radius", -1}}).validate(), kInvalidArgument);
  EXPECT_ANY_THROW(cli::config_from_json({{"gate_px", "wide"}}));

  TempDir tmp;
  EXPECT_COMAP_ERROR(cli::read_config(tmp / "none.json"), kMissingFile);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli("--help").exit_code, 0);
  EXPECT_EQ(run_cli("").exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("comap --no-such-flag").exit_code, 2);
  EXPECT_EQ(run_cli("comap --gate-px notanumber").exit_code, 2);
}

TEST(Cli, ErrorExitCodes) {
  TempDir tmp;
  EXPECT_EQ(run_cli("comap --scene " + q(tmp / "missing") + " --out " + q(tmp / "o")).exit_code,
            4);
  EXPECT_EQ(run_cli("synth --spec " + q(tmp / "missing.json") + " --out " + q(tmp / "s"))
                .exit_code,
            4);
  std::ofstream(tmp / "bad_config.json") << R"({"unknown_key": 1})";
  EXPECT_EQ(run_cli("comap --config " + q(tmp / "bad_config.json")).exit_code, 2);
  std::ofstream(tmp / "bad_spec.json") << R"({"surfaces": []})";
  EXPECT_EQ(run_cli("synth --spec " + q(tmp / "bad_spec.json") + " --out " + q(tmp / "s"))
                .exit_code,
            2);
  write_small_spec(tmp / "spec.json");
  ASSERT_EQ(run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "scene"))
                .exit_code,
            0);
  EXPECT_EQ(run_cli("enhance --scene " + q(tmp / "scene") + " --gate-px -1").exit_code, 2);
  EXPECT_EQ(run_cli("eval-loss --scene " + q(tmp / "scene") + " --out " + q(tmp / "o") +
                    " --gaussians " + q(tmp / "none.ply"))
                .exit_code,
            4);
}

// Full pipeline on a small scene; every stage rerun with a different thread
// count must reproduce its artifacts byte for byte.
TEST(Cli, PipelineIsDeterministicAcrossRerunsAndThreads) {
  TempDir tmp;
  write_small_spec(tmp / "spec.json");
  const fs::path scene = tmp / "scene";
  const fs::path out = tmp / "out";
  const std::string s = " --scene " + q(scene) + " --out " + q(out);
  std::ofstream(tmp / "config.json") << R"({"iterations": 40, "steps": 20, "num_points": 60,
                                           "snapshot_every": 10, "holdout": 0.2})";
  const std::string cfg = " --config " + q(tmp / "config.json");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "synth --spec " + q(tmp / "spec.json") + " --out " + q(scene)},
      {"comap", "comap" + s},
      {"enhance", "enhance" + s},
      {"train-proximity", "train-proximity --out " + q(out) + cfg},
      {"eval-loss", "eval-loss" + s + " --gaussians " + q(out / "enhance" / "p_final.ply") +
                        " --view 1 --l1 0.3 --dssim 0.1"},
      {"optimize-demo", "optimize-demo" + s + cfg},
  };
  for (const auto& [name, args] : stages) {
    SCOPED_TRACE(name);
    const RunResult first = run_cli(args + " --threads 1");
    ASSERT_EQ(first.exit_code, 0) << args;
    const fs::path root = name == "synth" ? scene : out;
    const auto before = snapshot(root);
    const RunResult second = run_cli(args + " --threads 3");
    ASSERT_EQ(second.exit_code, 0);
    EXPECT_EQ(first.out, second.out);
    const auto after = snapshot(root);
    ASSERT_EQ(before.size(), after.size());
    for (const auto& [file, bytes] : before) {
      ASSERT_TRUE(after.count(file)) << file;
      EXPECT_TRUE(after.at(file) == bytes) << file << " differs between runs";
    }
  }

  const json comap = read_json(out / "comap" / "report.json");
  EXPECT_EQ(comap["n_views"], 3);
  EXPECT_GE(comap["S"].get<double>(), 0.0);
  EXPECT_LE(comap["S"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(out / "comap" / "covis_0.pgm"));
  EXPECT_TRUE(fs::exists(out / "comap" / "covis_0_vis.pgm"));

  const json enhance = read_json(out / "enhance" / "report.json");
  EXPECT_GT(enhance["counts"]["P_T"].get<int>(), 0);
  EXPECT_EQ(enhance["counts"]["P_final"].get<int>(),
            enhance["P_final_sources"]["colmap"].get<int>() +
                enhance["P_final_sources"]["triangulated"].get<int>() +
                enhance["P_final_sources"]["mono"].get<int>());
  EXPECT_TRUE(enhance["config"]["epsilon"].is_number());

  const json train = read_json(out / "proximity" / "report.json");
  EXPECT_LT(train["final_loss"].get<double>(), train["initial_loss"].get<double>());
  EXPECT_EQ(train["config"]["iterations"], 40);

  const json eval = read_json(out / "eval" / "report_view1.json");
  EXPECT_NEAR(eval["total_objective"].get<double>(),
              0.8 * 0.3 + 0.2 * 0.1 + eval["L_p"].get<double>(), 1e-12);

  const json demo = read_json(out / "demo" / "report.json");
  EXPECT_TRUE(fs::exists(out / "demo" / "final.ply"));
  EXPECT_TRUE(fs::exists(out / "demo" / "convergence.csv"));
  EXPECT_TRUE(demo.contains("reduction"));

  // A flag overrides the config file field.
  ASSERT_EQ(run_cli("train-proximity --out " + q(out) + cfg + " --iters 5").exit_code, 0);
  EXPECT_EQ(read_json(out / "proximity" / "report.json")["config"]["iterations"], 5);
}

}  // namespace
}  // namespace comap
