#include "comap/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "comap/covis_map.hpp"
#include "comap/enhance.hpp"
#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/parallel.hpp"
#include "comap/proximity.hpp"
#include "comap/scene_io.hpp"
#include "comap/spatial_index.hpp"
#include "comap/synth.hpp"

namespace comap::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad_config(const std::string& msg) {
  fail(ErrorKind::kInvalidArgument, "config: " + msg);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    bad_config("field '" + key + "' has the wrong type");
  }
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
}

void write_report(const fs::path& path, const json& report) {
  write_text(path, report.dump(2) + "\n");
}

// --- scene loading ------------------------------------------------------------

fs::path sparse_dir(const RunConfig& c) {
  if (!c.sparse_dir.empty()) return c.sparse_dir;
  if (fs::is_directory(c.scene / "sparse")) return c.scene / "sparse";
  return c.scene;
}
fs::path depth_dir(const RunConfig& c) {
  return c.depth_dir.empty() ? c.scene / "depth" : c.depth_dir;
}
fs::path corr_dir(const RunConfig& c) {
  return c.corr_dir.empty() ? c.scene / "corr" : c.corr_dir;
}
fs::path model_path(const RunConfig& c) {
  return c.model.empty() ? c.out / "proximity" / "model.cmpx" : c.model;
}
fs::path cloud_path(const RunConfig& c) {
  return c.cloud.empty() ? c.out / "enhance" / "p_final.ply" : c.cloud;
}

SceneBundle load(const RunConfig& c) {
  if (c.scene.empty()) bad_config("--scene is required");
  if (!fs::is_directory(c.scene)) {
    fail(ErrorKind::kMissingFile, "scene directory " + c.scene.string() + " not found");
  }
  return io::load_scene(sparse_dir(c), depth_dir(c), corr_dir(c));
}

struct SceneMaps {
  std::vector<CovisMap> raw;
  std::vector<CovisMap> refined;
  SceneCovisScore score;
};

SceneMaps build_maps(const SceneBundle& bundle, const RunConfig& c) {
  const size_t n = bundle.views.size();
  SceneMaps m;
  m.raw.resize(n);
  m.refined.resize(n);
  parallel_for(n, c.threads, [&](size_t i) {
    const CameraView& view = bundle.views[i];
    std::vector<CorrespondenceSet> own;
    for (const auto& set : bundle.correspondences) {
      if (set.src_view == view.view_id) own.push_back(set);
    }
    m.raw[i] = build_covis_map(view, own, static_cast<int>(n), c.min_conf);
    m.refined[i] = refine_covis_map(m.raw[i], c.kernel_radius);
  });
  m.score = scene_covis_score(m.refined);
  return m;
}

// Config with the run-time defaults filled in.
json resolved(const RunConfig& c, const std::map<std::string, json>& extra = {}) {
  json j = config_to_json(c);
  for (const auto& [k, v] : extra) j[k] = v;
  return j;
}

}  // namespace

// --- config -------------------------------------------------------------------

void RunConfig::validate() const {
  if (!(gate_px > 0.0)) bad_config("gate_px must be > 0");
  if (epsilon && !(*epsilon >= 0.0)) bad_config("epsilon must be >= 0");
  if (dedup_radius && !(*dedup_radius >= 0.0)) bad_config("dedup_radius must be >= 0");
  if (kernel_radius < 0) bad_config("kernel_radius must be >= 0");
  if (stride < 1) bad_config("stride must be >= 1");
  if (!(min_conf >= 0.0 && min_conf <= 1.0)) bad_config("min_conf must lie in [0, 1]");
  if (!(ratio > 0.0)) bad_config("ratio must be > 0");
  if (r_neg && !(*r_neg > 0.0)) bad_config("r_neg must be > 0");
  if (iterations < 1) bad_config("iterations must be >= 1");
  if (!(lr > 0.0)) bad_config("lr must be > 0");
  if (!(holdout >= 0.0 && holdout < 1.0)) bad_config("holdout must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) bad_config("lambda must lie in [0, 1]");
  if (!(threshold >= 0.0 && threshold <= 1.0)) bad_config("threshold must lie in [0, 1]");
  if (steps < 0) bad_config("steps must be >= 0");
  if (!(step_size > 0.0)) bad_config("step_size must be > 0");
  if (num_points < 1) bad_config("num_points must be >= 1");
  if (snapshot_every < 1) bad_config("snapshot_every must be >= 1");
  if (threads < 0) bad_config("threads must be >= 0");
}

RunConfig config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) bad_config("top level must be an object");
  using Setter = std::function<void(const json&, const std::string&)>;
  auto path = [](fs::path& dst) -> Setter {
    return [&dst](const json& v, const std::string& k) { dst = as<std::string>(v, k); };
  };
  auto optional_double = [](std::optional<double>& dst) -> Setter {
    return [&dst](const json& v, const std::string& k) {
      if (v.is_null()) {
        dst.reset();
      } else {
        dst = as<double>(v, k);
      }
    };
  };
  auto value = [](auto& dst) -> Setter {
    return [&dst](const json& v, const std::string& k) {
      dst = as<std::remove_reference_t<decltype(dst)>>(v, k);
    };
  };
  const std::map<std::string, Setter> setters = {
      {"scene", path(c.scene)},
      {"sparse_dir", path(c.sparse_dir)},
      {"depth_dir", path(c.depth_dir)},
      {"corr_dir", path(c.corr_dir)},
      {"out", path(c.out)},
      {"spec", path(c.spec)},
      {"model", path(c.model)},
      {"cloud", path(c.cloud)},
      {"gaussians", path(c.gaussians)},
      {"seed",
       [&c](const json& v, const std::string& k) {
         if (v.is_null()) {
           c.seed.reset();
         } else {
           c.seed = as<std::uint64_t>(v, k);
         }
       }},
      {"threads", value(c.threads)},
      {"min_conf", value(c.min_conf)},
      {"kernel_radius", value(c.kernel_radius)},
      {"gate_px", value(c.gate_px)},
      {"epsilon", optional_double(c.epsilon)},
      {"stride", value(c.stride)},
      {"with_offset", value(c.with_offset)},
      {"dedup_radius", optional_double(c.dedup_radius)},
      {"ratio", value(c.ratio)},
      {"r_neg", optional_double(c.r_neg)},
      {"iterations", value(c.iterations)},
      {"lr", value(c.lr)},
      {"holdout", value(c.holdout)},
      {"view", value(c.view)},
      {"lambda", value(c.lambda)},
      {"l1", value(c.l1)},
      {"dssim", value(c.dssim)},
      {"threshold", value(c.threshold)},
      {"steps", value(c.steps)},
      {"step_size", value(c.step_size)},
      {"num_points", value(c.num_points)},
      {"snapshot_every", value(c.snapshot_every)},
  };
  for (const auto& [key, v] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) bad_config("unknown key '" + key + "'");
    it->second(v, key);
  }
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["scene"] = c.scene.string();
  j["sparse_dir"] = c.sparse_dir.string();
  j["depth_dir"] = c.depth_dir.string();
  j["corr_dir"] = c.corr_dir.string();
  j["out"] = c.out.string();
  j["spec"] = c.spec.string();
  j["model"] = c.model.string();
  j["cloud"] = c.cloud.string();
  j["gaussians"] = c.gaussians.string();
  j["seed"] = c.seed.value_or(0);
  j["min_conf"] = c.min_conf;
  j["kernel_radius"] = c.kernel_radius;
  j["gate_px"] = c.gate_px;
  j["epsilon"] = opt(c.epsilon);
  j["stride"] = c.stride;
  j["with_offset"] = c.with_offset;
  j["dedup_radius"] = opt(c.dedup_radius);
  j["ratio"] = c.ratio;
  j["r_neg"] = opt(c.r_neg);
  j["iterations"] = c.iterations;
  j["lr"] = c.lr;
  j["holdout"] = c.holdout;
  j["view"] = c.view;
  j["lambda"] = c.lambda;
  j["l1"] = c.l1;
  j["dssim"] = c.dssim;
  j["threshold"] = c.threshold;
  j["steps"] = c.steps;
  j["step_size"] = c.step_size;
  j["num_points"] = c.num_points;
  j["snapshot_every"] = c.snapshot_every;
  return j;
}

RunConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kMissingFile, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    bad_config(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// --- comap --------------------------------------------------------------------

json cmd_comap(const RunConfig& c) {
  c.validate();
  const SceneBundle bundle = load(c);
  const SceneMaps maps = build_maps(bundle, c);
  const SceneCovisScore raw_score = scene_covis_score(maps.raw);
  const fs::path dir = c.out / "comap";
  ensure_dir(dir);

  json per_view = json::array();
  for (size_t i = 0; i < bundle.views.size(); ++i) {
    const int id = bundle.views[i].view_id;
    const std::string stem = "covis_" + std::to_string(id);
    io::write_covis_map_image(maps.raw[i], dir / stem);
    io::write_covis_map_image(maps.refined[i], dir / (stem + "_refined"));
    per_view.push_back({{"view_id", id},
                        {"mean", maps.score.per_view_means[i]},
                        {"mean_unrefined", raw_score.per_view_means[i]},
                        {"max_count", maps.refined[i].max_count()}});
  }
  if (bundle.correspondences.empty()) {
    log::warn("no_correspondences").kv("scene", c.scene.string());
  }
  json report;
  report["command"] = "comap";
  report["config"] = resolved(c);
  report["n_views"] = bundle.views.size();
  report["S"] = maps.score.score;
  report["S_unrefined"] = raw_score.score;
  report["per_view"] = per_view;
  write_report(dir / "report.json", report);
  log::info("comap").kv("views", bundle.views.size()).kv("S", maps.score.score);
  return report;
}

// --- enhance ------------------------------------------------------------------

json cmd_enhance(const RunConfig& c) {
  c.validate();
  const SceneBundle bundle = load(c);
  const SceneMaps maps = build_maps(bundle, c);
  const fs::path dir = c.out / "enhance";
  ensure_dir(dir);

  const PointCloud& p_c = bundle.colmap_points;
  PointCloud p_t;
  if (bundle.correspondences.empty()) {
    log::warn("no_correspondences").kv("effect", "P_T empty");
  } else {
    p_t = triangulate_corrs(bundle, c.gate_px);
  }
  const double eps = c.epsilon.value_or(default_epsilon(p_c));
  const double dedup = c.dedup_radius.value_or(eps);
  const PointCloud p_u = merge_clouds(p_c, p_t, eps);
  // The split uses the unrefined maps: a pixel is covisible when any
  // correspondence exists for it.
  const CloudSplit split = split_by_covis(p_u, bundle.views, maps.raw);

  const size_t n = bundle.views.size();
  std::vector<PointCloud> mono(n);
  std::vector<json> view_stats(n);
  std::vector<std::uint8_t> has_mono(n, 0);
  if (bundle.depth_maps.empty()) {
    log::warn("no_depth_maps").kv("effect", "P_final = P_u^low");
  }
  parallel_for(n, c.threads, [&](size_t i) {
    const CameraView& view = bundle.views[i];
    json s = {{"view_id", view.view_id}};
    auto depth = bundle.depth_maps.find(view.view_id);
    if (depth == bundle.depth_maps.end()) {
      s["status"] = "no_depth";
      view_stats[i] = s;
      return;
    }
    const CloudSplit d = unproject_depth(view, depth->second, maps.raw[i], c.stride);
    s["P_d_low"] = d.low.size();
    s["P_d_high"] = d.high.size();
    try {
      const ScaleTransform t = fit_scale(d.low, split.low, view, c.with_offset);
      mono[i] = apply_scale(t, d.high, view);
      has_mono[i] = 1;
      s["status"] = "ok";
      s["scale"] = {t.scale.x(), t.scale.y(), t.scale.z()};
      s["offset"] = {t.offset.x(), t.offset.y(), t.offset.z()};
      s["fit_stats"] = {{"pair_count", t.stats.pair_count},
                        {"rms_residual", t.stats.rms_residual},
                        {"inlier_fraction", t.stats.inlier_fraction}};
      s["P_s_high"] = mono[i].size();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInsufficientPairs &&
          e.kind() != ErrorKind::kNonPositiveScale) {
        throw;
      }
      s["status"] = std::string(error_kind_name(e.kind()));
      log::warn("view_skipped")
          .kv("view", view.view_id)
          .kv("reason", error_kind_name(e.kind()));
    }
    view_stats[i] = s;
  });

  const PointCloud p_final = assemble_final(split.low, mono, dedup);

  io::write_ply(p_t, dir / "p_t.ply");
  io::write_ply(p_u, dir / "p_u.ply");
  io::write_ply(split.low, dir / "p_u_low.ply");
  for (size_t i = 0; i < n; ++i) {
    if (has_mono[i]) {
      io::write_ply(mono[i],
                    dir / ("p_s_high_" + std::to_string(bundle.views[i].view_id) + ".ply"));
    }
  }
  io::write_ply(p_final, dir / "p_final.ply");

  json report;
  report["command"] = "enhance";
  report["config"] = resolved(c, {{"epsilon", eps}, {"dedup_radius", dedup}});
  report["counts"] = {{"P_C", p_c.size()},
                      {"P_T", p_t.size()},
                      {"P_u", p_u.size()},
                      {"P_u_low", split.low.size()},
                      {"P_u_high", split.high.size()},
                      {"P_final", p_final.size()}};
  report["P_final_sources"] = {{"colmap", p_final.count(PointSource::kColmap)},
                               {"triangulated", p_final.count(PointSource::kTriangulated)},
                               {"mono", p_final.count(PointSource::kMono)}};
  report["P_u_low_sources"] = {{"colmap", split.low.count(PointSource::kColmap)},
                               {"triangulated", split.low.count(PointSource::kTriangulated)},
                               {"mono", split.low.count(PointSource::kMono)}};
  report["S"] = maps.score.score;
  report["per_view"] = view_stats;
  write_report(dir / "report.json", report);
  log::info("enhance")
      .kv("P_C", p_c.size())
      .kv("P_T", p_t.size())
      .kv("P_u", p_u.size())
      .kv("P_final", p_final.size());
  return report;
}

// --- train-proximity ----------------------------------------------------------

json cmd_train_proximity(const RunConfig& c) {
  c.validate();
  const fs::path cloud_file = cloud_path(c);
  const PointCloud cloud = io::read_ply(cloud_file);
  if (cloud.empty()) fail(ErrorKind::kEmptyInput, cloud_file.string() + " has no points");
  const std::uint64_t seed = c.seed.value_or(0);
  const double r_neg = c.r_neg.value_or(default_negative_radius(cloud));
  TrainingSet full = make_training_set(cloud, c.ratio, r_neg, seed);

  // Optional held-out split, drawn from a stream separate from training.
  TrainingSet train = full;
  std::vector<Vec3> held_pos, held_neg;
  if (c.holdout > 0.0) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto split = [&](size_t count) {
      std::vector<size_t> order(count);
      for (size_t i = 0; i < count; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      const auto k = static_cast<size_t>(c.holdout * static_cast<double>(count));
      std::vector<std::uint8_t> held(count, 0);
      for (size_t i = 0; i < k; ++i) held[order[i]] = 1;
      return held;
    };
    const auto hp = split(full.positives.size());
    const auto hn = split(full.negatives.size());
    train.positives.points.clear();
    train.negatives.clear();
    for (size_t i = 0; i < hp.size(); ++i) {
      if (hp[i]) {
        held_pos.push_back(full.positives.points[i].position);
      } else {
        train.positives.points.push_back(full.positives.points[i]);
      }
    }
    for (size_t i = 0; i < hn.size(); ++i) {
      (hn[i] ? held_neg : train.negatives).push_back(full.negatives[i]);
    }
  }

  TrainingOptions options;
  options.iterations = c.iterations;
  options.learning_rate = c.lr;
  options.seed = seed;
  std::vector<double> curve;
  const ProximityModel model = train_classifier(train, options, &curve);

  const fs::path dir = c.out / "proximity";
  ensure_dir(dir);
  model.save(dir / "model.cmpx");
  std::string csv = "iteration,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) csv += std::to_string(i) + "," + fmt(curve[i]) + "\n";
  csv += std::to_string(curve.size()) + "," + fmt(model.meta.final_loss) + "\n";
  write_text(dir / "train_curve.csv", csv);

  const auto train_pos = train.positives.positions();
  const Classification cls = classify_cloud(model, cloud, c.threshold);
  io::write_ply(cls.colored, dir / "p_final_classified.ply");

  json report;
  report["command"] = "train-proximity";
  report["config"] = resolved(c, {{"r_neg", r_neg}, {"cloud", cloud_file.string()}});
  report["positives"] = train.positives.size();
  report["negatives"] = train.negatives.size();
  report["initial_loss"] = curve.empty() ? model.meta.final_loss : curve.front();
  report["final_loss"] = model.meta.final_loss;
  report["train_accuracy"] =
      classification_accuracy(model, train_pos, train.negatives, c.threshold);
  if (!held_pos.empty() || !held_neg.empty()) {
    report["heldout_accuracy"] = classification_accuracy(model, held_pos, held_neg, c.threshold);
    report["heldout_samples"] = held_pos.size() + held_neg.size();
  }
  report["near_fraction"] = cls.near_fraction;
  report["normalization"] = {
      {"center", {model.normalization.center.x(), model.normalization.center.y(),
                  model.normalization.center.z()}},
      {"scale", model.normalization.scale}};
  write_report(dir / "report.json", report);
  return report;
}

// --- eval-loss ----------------------------------------------------------------

json cmd_eval_loss(const RunConfig& c) {
  c.validate();
  if (c.gaussians.empty()) bad_config("--gaussians is required");
  const SceneBundle bundle = load(c);
  const SceneMaps maps = build_maps(bundle, c);
  const ProximityModel model = ProximityModel::load(model_path(c));
  const PointCloud g_cloud = io::read_ply(c.gaussians);
  if (g_cloud.empty()) fail(ErrorKind::kEmptyInput, c.gaussians.string() + " has no Gaussians");
  GaussianSet g{g_cloud.positions()};
  const size_t vi = bundle.view_index(c.view);
  const ProximityLoss loss =
      proximity_loss(model, g, bundle.views[vi], maps.refined[vi], maps.score);

  const fs::path dir = c.out / "eval";
  ensure_dir(dir);
  std::string csv = "index,chi,weight,s,contribution\n";
  size_t in_frustum = 0;
  double miss = 0.0;
  for (size_t i = 0; i < loss.terms.size(); ++i) {
    const GaussianTerm& t = loss.terms[i];
    in_frustum += t.in_frustum ? 1 : 0;
    miss += 1.0 - t.score;
    csv += std::to_string(i) + "," + (t.in_frustum ? "1" : "0") + "," + fmt(t.weight) + "," +
           fmt(t.score) + "," + fmt(t.contribution) + "\n";
  }
  const std::string csv_name = "loss_view" + std::to_string(c.view) + ".csv";
  write_text(dir / csv_name, csv);

  json report;
  report["command"] = "eval-loss";
  report["config"] = resolved(c, {{"model", model_path(c).string()}});
  report["view"] = c.view;
  report["L_p"] = loss.value;
  report["n_gaussians"] = loss.terms.size();
  report["in_frustum"] = in_frustum;
  report["S"] = maps.score.score;
  report["w_out"] = weight_out(maps.score);
  report["mean_one_minus_score"] = miss / static_cast<double>(loss.terms.size());
  report["total_objective"] = total_objective(c.l1, c.dssim, c.lambda, loss.value);
  report["csv"] = csv_name;
  write_report(dir / ("report_view" + std::to_string(c.view) + ".json"), report);
  return report;
}

// --- optimize-demo ------------------------------------------------------------

json cmd_optimize_demo(const RunConfig& c) {
  c.validate();
  const SceneBundle bundle = load(c);
  const SceneMaps maps = build_maps(bundle, c);
  const ProximityModel model = ProximityModel::load(model_path(c));
  const fs::path cloud_file = cloud_path(c);
  const PointCloud reference = io::read_ply(cloud_file);
  if (reference.empty()) fail(ErrorKind::kEmptyInput, cloud_file.string() + " has no points");
  const KdTree tree(reference.positions());

  std::vector<Vec3> start;
  if (!c.gaussians.empty()) {
    start = io::read_ply(c.gaussians).positions();
    if (start.empty()) fail(ErrorKind::kEmptyInput, c.gaussians.string() + " has no Gaussians");
  } else {
    // Uniform over the classifier's normalized cube.
    std::mt19937_64 rng(c.seed.value_or(0));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < c.num_points; ++i) {
      const Vec3 q(u(rng), u(rng), u(rng));
      start.push_back(model.normalization.invert(q));
    }
  }

  const fs::path dir = c.out / "demo";
  ensure_dir(dir);
  auto mean_distance = [&](const std::vector<Vec3>& pts) {
    double sum = 0.0;
    for (const Vec3& p : pts) sum += tree.nearest(p).distance;
    return sum / static_cast<double>(pts.size());
  };
  auto snapshot = [&](const std::vector<Vec3>& pts, const fs::path& path) {
    PointCloud cloud;
    for (const Vec3& p : pts) {
      CloudPoint cp;
      cp.position = p;
      cloud.points.push_back(cp);
    }
    io::write_ply(cloud, path);
  };

  std::string csv = "step,mean_distance\n";
  std::vector<double> curve;
  DescentOptions options;
  options.steps = c.steps;
  options.step_size = c.step_size;
  const auto final_positions = descend_proximity(
      model, start, bundle.views, maps.refined, maps.score, options,
      [&](int step, const std::vector<Vec3>& pts) {
        const double d = mean_distance(pts);
        curve.push_back(d);
        csv += std::to_string(step) + "," + fmt(d) + "\n";
        if (step % c.snapshot_every == 0 || step == c.steps) {
          char name[32];
          std::snprintf(name, sizeof(name), "step_%04d.ply", step);
          snapshot(pts, dir / name);
        }
      });
  write_text(dir / "convergence.csv", csv);
  snapshot(final_positions, dir / "final.ply");

  json report;
  report["command"] = "optimize-demo";
  report["config"] = resolved(c, {{"model", model_path(c).string()},
                                  {"cloud", cloud_file.string()}});
  report["points"] = start.size();
  report["initial_mean_distance"] = curve.front();
  report["final_mean_distance"] = curve.back();
  report["reduction"] = curve.front() > 0.0 ? 1.0 - curve.back() / curve.front() : 0.0;
  report["S"] = maps.score.score;
  write_report(dir / "report.json", report);
  return report;
}

// --- synth --------------------------------------------------------------------

json cmd_synth(const RunConfig& c) {
  c.validate();
  if (c.spec.empty()) bad_config("--spec is required");
  synth::SceneSpec spec = synth::read_scene_spec(c.spec);
  if (c.seed) spec.seed = *c.seed;
  const synth::SyntheticScene scene = synth::generate_scene(spec, c.threads);
  const auto corrs = synth::oracle_correspondences(scene, spec.noise_px, spec.dropout,
                                                   spec.seed, c.threads);
  synth::write_scene(scene, corrs, c.out);
  size_t matches = 0;
  for (const auto& s : corrs) matches += s.matches.size();

  json report;
  report["command"] = "synth";
  report["config"] = resolved(c, {{"seed", spec.seed}});
  report["views"] = scene.bundle.views.size();
  report["sparse_points"] = scene.bundle.colmap_points.size();
  report["correspondence_sets"] = corrs.size();
  report["matches"] = matches;
  write_report(c.out / "report.json", report);
  log::info("synth").kv("out", c.out.string()).kv("matches", matches);
  return report;
}

}  // namespace comap::cli
