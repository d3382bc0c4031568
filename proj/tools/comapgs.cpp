// comapgs: covisibility maps, point-cloud enhancement and proximity
// supervision from the command line.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "comap/cli.hpp"
#include "comap/error.hpp"
#include "comap/log.hpp"

namespace {

using nlohmann::json;

// Flags are collected as JSON overrides so they go through the same key
// validation as config files.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    entries_.push_back([opt, value, key](json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
  }

  void add_path(CLI::App* app, const std::string& flag, const std::string& key,
                const std::string& help) {
    add<std::string>(app, flag, key, help);
  }

  void add_negated_flag(CLI::App* app, const std::string& flag,
                        const std::string& key, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    entries_.push_back([opt, key](json& j) {
      if (opt->count() > 0) j[key] = false;
    });
  }

  json collect() const {
    json j = json::object();
    for (const auto& e : entries_) e(j);
    return j;
  }

 private:
  std::vector<std::function<void(json&)>> entries_;
};

struct Command {
  CLI::App* app = nullptr;
  Overrides overrides;
  std::string config;
  int verbosity = 0;
  bool quiet = false;
};

void add_common(Command& cmd) {
  CLI::App* app = cmd.app;
  app->add_option("--config", cmd.config, "JSON run config; flags override its fields");
  cmd.overrides.add<std::uint64_t>(app, "--seed", "seed", "Random seed");
  cmd.overrides.add<int>(app, "--threads", "threads",
                         "Worker threads for per-view stages (0 = all cores)");
  cmd.overrides.add_path(app, "--out", "out", "Output root directory");
  app->add_flag("-v,--verbose", cmd.verbosity, "Log progress (info level)");
  app->add_flag("-q,--quiet", cmd.quiet, "Suppress warnings");
}

void add_scene(Command& cmd) {
  CLI::App* app = cmd.app;
  cmd.overrides.add_path(app, "--scene", "scene",
                         "Scene directory (sparse/ or COLMAP text at top level)");
  cmd.overrides.add_path(app, "--sparse-dir", "sparse_dir", "COLMAP text directory");
  cmd.overrides.add_path(app, "--depth-dir", "depth_dir", "Depth maps (default <scene>/depth)");
  cmd.overrides.add_path(app, "--corr-dir", "corr_dir",
                         "Correspondence JSONL files (default <scene>/corr)");
  cmd.overrides.add<double>(app, "--min-conf", "min_conf",
                            "Ignore matches below this confidence");
  cmd.overrides.add<int>(app, "--kernel-radius", "kernel_radius",
                         "Morphological opening radius (default 1)");
  cmd.overrides.add<double>(app, "--gate-px", "gate_px",
                            "Triangulation reprojection gate in pixels (default 2)");
  cmd.overrides.add<double>(app, "--epsilon", "epsilon",
                            "Merge distance (default: half the median spacing of the "
                            "sparse points)");
  cmd.overrides.add<double>(app, "--lambda", "lambda", "D-SSIM weight in [0, 1]");
}

int run(const std::string& name, Command& cmd) {
  using comap::log::Level;
  comap::log::set_level(cmd.quiet ? Level::kQuiet
                                   : (cmd.verbosity > 0 ? Level::kInfo : Level::kWarning));
  comap::cli::RunConfig config;
  if (!cmd.config.empty()) config = comap::cli::read_config(cmd.config);
  config = comap::cli::config_from_json(cmd.overrides.collect(), config);

  json report;
  if (name == "comap") {
    report = comap::cli::cmd_comap(config);
    std::printf("S=%.17g\n", report["S"].get<double>());
  } else if (name == "enhance") {
    report = comap::cli::cmd_enhance(config);
    std::printf("P_final=%zu\n", report["counts"]["P_final"].get<size_t>());
  } else if (name == "train-proximity") {
    report = comap::cli::cmd_train_proximity(config);
    std::printf("final_loss=%.17g\n", report["final_loss"].get<double>());
  } else if (name == "eval-loss") {
    report = comap::cli::cmd_eval_loss(config);
    std::printf("L_p=%.17g\n", report["L_p"].get<double>());
  } else if (name == "optimize-demo") {
    report = comap::cli::cmd_optimize_demo(config);
    std::printf("reduction=%.17g\n", report["reduction"].get<double>());
  } else if (name == "synth") {
    report = comap::cli::cmd_synth(config);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covisibility maps, point-cloud enhancement and proximity supervision"};
  app.require_subcommand(1);

  std::map<std::string, Command> commands;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    Command& cmd = commands[name];
    cmd.app = app.add_subcommand(name, help);
    add_common(cmd);
    return cmd;
  };

  Command& comap_cmd = make("comap", "Build covisibility maps and the scene score");
  add_scene(comap_cmd);

  Command& enhance = make("enhance", "Triangulate, merge and rescale mono-view depth");
  add_scene(enhance);
  enhance.overrides.add<int>(enhance.app, "--stride", "stride", "Depth unprojection stride");
  enhance.overrides.add<double>(enhance.app, "--dedup-radius", "dedup_radius",
                                "Mono-point dedup radius (default: epsilon)");
  enhance.overrides.add_negated_flag(enhance.app, "--no-offset", "with_offset",
                                     "Fit scale only, without per-axis offset");

  Command& train = make("train-proximity", "Train the proximity classifier on P_final");
  train.overrides.add_path(train.app, "--cloud", "cloud",
                           "Positive cloud (default <out>/enhance/p_final.ply)");
  train.overrides.add<double>(train.app, "--ratio", "ratio", "Negatives per positive");
  train.overrides.add<double>(train.app, "--r-neg", "r_neg",
                              "Negative exclusion radius (default 2% of bbox diagonal)");
  train.overrides.add<std::uint32_t>(train.app, "--iters", "iterations", "Adam iterations");
  train.overrides.add<double>(train.app, "--lr", "lr", "Adam learning rate");
  train.overrides.add<double>(train.app, "--holdout", "holdout",
                              "Fraction of samples held out for accuracy");
  train.overrides.add<double>(train.app, "--threshold", "threshold",
                              "Near/far score threshold");

  Command& eval = make("eval-loss", "Evaluate the proximity loss for one view");
  add_scene(eval);
  eval.overrides.add_path(eval.app, "--model", "model",
                          "Model file (default <out>/proximity/model.cmpx)");
  eval.overrides.add_path(eval.app, "--gaussians", "gaussians", "Gaussian centers (PLY)");
  eval.overrides.add<int>(eval.app, "--view", "view", "View id");
  eval.overrides.add<double>(eval.app, "--l1", "l1", "Photometric L1 term");
  eval.overrides.add<double>(eval.app, "--dssim", "dssim", "D-SSIM term");

  Command& demo = make("optimize-demo", "Move points by descent on the proximity loss");
  add_scene(demo);
  demo.overrides.add_path(demo.app, "--model", "model",
                          "Model file (default <out>/proximity/model.cmpx)");
  demo.overrides.add_path(demo.app, "--cloud", "cloud",
                          "Reference cloud for distances (default P_final)");
  demo.overrides.add_path(demo.app, "--gaussians", "gaussians",
                          "Start positions (default: uniform random)");
  demo.overrides.add<int>(demo.app, "--steps", "steps", "Descent steps");
  demo.overrides.add<double>(demo.app, "--step-size", "step_size",
                             "Step length in normalized coordinates");
  demo.overrides.add<int>(demo.app, "--num-points", "num_points", "Random start points");
  demo.overrides.add<int>(demo.app, "--snapshot-every", "snapshot_every",
                          "Steps between PLY snapshots");

  Command& synth = make("synth", "Generate a synthetic scene from a JSON spec");
  synth.overrides.add_path(synth.app, "--spec", "spec", "Scene spec JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      return run(name, cmd);
    } catch (const comap::Error& e) {
      std::fprintf(stderr, "level=error event=failed kind=%s message=\"%s\"\n",
                   std::string(comap::error_kind_name(e.kind())).c_str(), e.what());
      return comap::exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
      std::fprintf(stderr, "level=error event=failed kind=IoError message=\"%s\"\n", e.what());
      return 4;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "level=error event=failed kind=InvalidArgument message=\"%s\"\n",
                   e.what());
      return 2;
    }
  }
  return 2;
}
