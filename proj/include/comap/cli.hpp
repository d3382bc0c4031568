#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace comap::cli {

namespace fs = std::filesystem;

// Every tunable of the pipeline. Unset optionals resolve to data-driven
// defaults at run time; the resolved values are written into each report.
struct RunConfig {
  // Paths. Empty sparse/depth/corr dirs resolve relative to `scene`.
  fs::path scene;
  fs::path sparse_dir;
  fs::path depth_dir;
  fs::path corr_dir;
  fs::path out = "out";
  fs::path spec;       // synth
  fs::path model;      // default <out>/proximity/model.cmpx
  fs::path cloud;      // default <out>/enhance/p_final.ply
  fs::path gaussians;  // eval-loss / optimize-demo input

  // Unset means 0, except for synth where the scene spec's seed applies.
  std::optional<std::uint64_t> seed;
  // Not part of reports: outputs do not depend on it.
  int threads = 0;

  // comap
  double min_conf = 0.0;
  int kernel_radius = 1;
  // enhance
  double gate_px = 2.0;
  std::optional<double> epsilon;
  int stride = 4;
  bool with_offset = true;
  std::optional<double> dedup_radius;
  // train-proximity
  double ratio = 1.0;
  std::optional<double> r_neg;
  std::uint32_t iterations = 1000;
  double lr = 0.001;
  double holdout = 0.0;
  // eval-loss
  int view = 0;
  double lambda = 0.2;
  double l1 = 0.0;
  double dssim = 0.0;
  double threshold = 0.5;
  // optimize-demo
  int steps = 500;
  double step_size = 0.01;
  int num_points = 500;
  int snapshot_every = 50;

  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json config_to_json(const RunConfig& c);
RunConfig read_config(const fs::path& path);

// Each command writes under <out>/<stage>/ and returns the report it wrote.
nlohmann::json cmd_comap(const RunConfig& c);
nlohmann::json cmd_enhance(const RunConfig& c);
nlohmann::json cmd_train_proximity(const RunConfig& c);
nlohmann::json cmd_eval_loss(const RunConfig& c);
nlohmann::json cmd_optimize_demo(const RunConfig& c);
nlohmann::json cmd_synth(const RunConfig& c);

}  // namespace comap::cli
