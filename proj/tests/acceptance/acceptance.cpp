// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comap/camera.hpp"
#include "comap/cli.hpp"
#include "comap/covis_map.hpp"
#include "comap/enhance.hpp"
#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/proximity.hpp"
#include "comap/scene_io.hpp"
#include "comap/spatial_index.hpp"
#include "comap/synth.hpp"

namespace {

namespace fs = std::filesystem;
using namespace comap;
using nlohmann::json;

// --- pinned tolerances and limits -------------------------------------------

constexpr int kCovisScenes = 20;
constexpr double kCovisLimitS = 10.0;

constexpr int kMergePairs = 100;
constexpr int kMergeMaxPoints = 5000;
constexpr double kMergeLimitS = 30.0;

constexpr double kTriExactTolM = 1e-5;
constexpr double kTriNoisePx = 1.0;
constexpr double kTriGatePx = 2.0;
constexpr double kTriBoundFactor = 5.0;
constexpr double kTriMinFraction = 0.95;
constexpr double kTriLimitS = 60.0;

constexpr int kScaleSeeds = 20;
constexpr double kScaleDepthNoise = 0.01;
constexpr double kScaleRelTol = 0.02;
constexpr double kScaleLimitS = 30.0;

constexpr int kWeightUlps = 2;

constexpr double kLossTol = 1e-12;
constexpr int kGradGaussians = 100;
constexpr double kGradStepNormalized = 1e-4;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradEdgePx = 1e-3;
constexpr double kGradLimitS = 30.0;

constexpr int kToySeeds = 5;
constexpr int kToyPositives = 500;
constexpr std::uint32_t kToyIterations = 1000;
constexpr double kToyLr = 0.001;
constexpr double kToyTrainAcc = 0.99;
constexpr double kToyHeldoutAcc = 0.95;
constexpr double kToyLimitS = 120.0;

constexpr int kDemoPoints = 500;
constexpr int kDemoSteps = 500;
constexpr double kDemoMinReduction = 0.5;
constexpr double kDemoLimitS = 120.0;

constexpr double kWallTolM = 0.05;

constexpr double kDeterminismLimitS = 120.0;

// --- harness -------------------------------------------------------------------

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_scratch;
int g_failures = 0;

void run_criterion(int id, const std::string& name, double limit_s,
                   const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string detail = o.detail;
  if (limit_s > 0.0 && secs >= limit_s) {
    o.pass = false;
    detail += "; over time limit";
  }
  char timing[64];
  if (limit_s > 0.0) {
    std::snprintf(timing, sizeof(timing), "%.2f s / limit %.0f s", secs, limit_s);
  } else {
    std::snprintf(timing, sizeof(timing), "%.2f s", secs);
  }
  std::printf("%s criterion %d: %s | %s | %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str(), timing);
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path data_dir() { return fs::path(COMAP_SOURCE_DIR) / "data" / "scenes"; }

std::vector<CorrespondenceSet> sets_from(const std::vector<CorrespondenceSet>& all, int src) {
  std::vector<CorrespondenceSet> out;
  for (const auto& s : all) {
    if (s.src_view == src) out.push_back(s);
  }
  return out;
}

struct SceneMaps {
  std::vector<CovisMap> raw;
  std::vector<CovisMap> refined;
  SceneCovisScore score;
};

SceneMaps maps_for(const synth::SyntheticScene& scene,
                   const std::vector<CorrespondenceSet>& sets) {
  SceneMaps m;
  const int n = static_cast<int>(scene.bundle.views.size());
  for (const auto& v : scene.bundle.views) {
    m.raw.push_back(build_covis_map(v, sets_from(sets, v.view_id), n));
    m.refined.push_back(refine_covis_map(m.raw.back(), 1));
  }
  m.score = scene_covis_score(m.refined);
  return m;
}

// --- 1: covisibility ----------------------------------------------------------

synth::SceneSpec random_scene_spec(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  synth::SceneSpec s;
  s.width = 40 + static_cast<int>(rng() % 121);
  s.height = 30 + static_cast<int>(rng() % 91);
  s.fov_deg = 40.0 + 40.0 * u(rng);
  s.seed = rng();
  s.sparse_stride = 8;
  s.rig.views = 3 + static_cast<int>(rng() % 6);
  if (rng() % 2 == 0) {
    s.rig.type = synth::RigType::kForwardFacing;
    s.rig.baseline = 0.1 + 0.4 * u(rng);
    s.surfaces.push_back(synth::Primitive::plane(Vec3(0, 0, 4.0 + 2.0 * u(rng)),
                                                 Vec3(0.2 * (u(rng) - 0.5), 0, -1)));
    for (int k = 0; k < 3; ++k) {
      const Vec3 c(2.0 * (u(rng) - 0.5), 1.5 * (u(rng) - 0.5), 2.0 + 1.5 * u(rng));
      if (rng() % 2 == 0) {
        s.surfaces.push_back(synth::Primitive::sphere(c, 0.2 + 0.4 * u(rng)));
      } else {
        const Vec3 h(0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng));
        s.surfaces.push_back(synth::Primitive::box(c - h, c + h));
      }
    }
  } else {
    s.rig.type = synth::RigType::kOutward360;
    s.rig.radius = 3.0 + 2.0 * u(rng);
    s.rig.height = u(rng) - 0.5;
    s.surfaces.push_back(synth::Primitive::sphere(Vec3::Zero(), 0.6 + 0.6 * u(rng)));
    s.surfaces.push_back(synth::Primitive::box(Vec3(0.4, -0.3, -0.3), Vec3(1.4, 0.3, 0.3)));
  }
  return s;
}

Outcome criterion_covisibility() {
  std::mt19937_64 rng(1001);
  size_t pixels = 0;
  size_t mismatches = 0;
  for (int k = 0; k < kCovisScenes; ++k) {
    const synth::SceneSpec spec = random_scene_spec(rng);
    const auto scene = synth::generate_scene(spec);
    const int n = static_cast<int>(scene.bundle.views.size());

    // Noise-free matches against direct visibility counting.
    const auto clean = synth::oracle_correspondences(scene, 0.0, 0.0, spec.seed);
    const auto visibility = synth::oracle_covis_map(scene);
    // Noisy, sparse matches against a recount of the match sets themselves.
    const auto noisy = synth::oracle_correspondences(scene, 0.7, 0.3, spec.seed + 1);
    for (size_t i = 0; i < scene.bundle.views.size(); ++i) {
      const CameraView& v = scene.bundle.views[i];
      const CovisMap a = build_covis_map(v, sets_from(clean, v.view_id), n);
      const CovisMap b = build_covis_map(v, sets_from(noisy, v.view_id), n);
      std::vector<int> recount(static_cast<size_t>(v.width) * v.height, 0);
      for (const auto& set : sets_from(noisy, v.view_id)) {
        std::vector<char> seen(recount.size(), 0);
        for (const auto& m : set.matches) {
          const size_t idx = static_cast<size_t>(std::floor(m.src.y)) * v.width +
                             static_cast<size_t>(std::floor(m.src.x));
          seen[idx] = 1;
        }
        for (size_t p = 0; p < seen.size(); ++p) recount[p] += seen[p];
      }
      for (size_t p = 0; p < recount.size(); ++p) {
        pixels += 2;
        mismatches += a.counts[p] != visibility[i].counts[p];
        mismatches += b.counts[p] != recount[p];
      }
    }
  }
  return {mismatches == 0, std::to_string(kCovisScenes) + " scenes, " + std::to_string(pixels) +
                               " pixel checks, " + std::to_string(mismatches) + " mismatches"};
}

// --- 2: strict merge filter -------------------------------------------------------

Outcome criterion_merge() {
  std::mt19937_64 rng(2002);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  size_t mismatched_pairs = 0;
  size_t ties = 0;
  size_t checked = 0;
  for (int k = 0; k < kMergePairs; ++k) {
    const int nb = 1 + static_cast<int>(rng() % kMergeMaxPoints);
    const int nt = static_cast<int>(rng() % (kMergeMaxPoints + 1));
    const bool lattice = k % 3 == 0;
    const double eps = lattice ? 0.25 * (1 + rng() % 3) : 0.1 * u(rng);
    auto sample = [&]() {
      if (lattice) {
        // Quarter-unit lattice: distances of exactly eps occur often.
        return Vec3(0.25 * (rng() % 16), 0.25 * (rng() % 16), 0.25 * (rng() % 4));
      }
      return Vec3(u(rng), u(rng), 0.2 * u(rng));
    };
    PointCloud base, tri;
    for (int i = 0; i < nb; ++i) {
      CloudPoint p;
      p.position = sample();
      base.points.push_back(p);
    }
    for (int i = 0; i < nt; ++i) {
      CloudPoint p;
      p.position = sample();
      p.source = PointSource::kTriangulated;
      tri.points.push_back(p);
    }
    const PointCloud merged = merge_clouds(base, tri, eps);
    std::vector<Vec3> expected;
    for (const auto& p : base.points) expected.push_back(p.position);
    for (const auto& q : tri.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : base.points) best = std::min(best, (p.position - q.position).norm());
      ties += best == eps;
      if (best > eps) expected.push_back(q.position);
    }
    checked += tri.size();
    bool same = merged.size() == expected.size();
    for (size_t i = 0; same && i < expected.size(); ++i) {
      same = merged.points[i].position == expected[i];
    }
    mismatched_pairs += !same;
  }
  return {mismatched_pairs == 0,
          std::to_string(kMergePairs) + " cloud pairs, " + std::to_string(checked) +
              " candidates, " + std::to_string(ties) + " exact ties, " +
              std::to_string(mismatched_pairs) + " mismatched pairs"};
}

// --- 3: triangulation --------------------------------------------------------------

// RMS 3-D error of a least-squares triangulation with isotropic pixel noise
// sigma in every listed view, to first order.
double noise_bound(const Vec3& x, const std::vector<const CameraView*>& views, double sigma) {
  Mat3 info = Mat3::Zero();
  for (const CameraView* v : views) {
    const Vec3 c = v->to_camera(x);
    Eigen::Matrix<double, 2, 3> dp;
    dp << v->fx / c.z(), 0, -v->fx * c.x() / (c.z() * c.z()), 0, v->fy / c.z(),
        -v->fy * c.y() / (c.z() * c.z());
    const Eigen::Matrix<double, 2, 3> j = dp * v->rotation();
    info += j.transpose() * j;
  }
  return sigma * std::sqrt(info.inverse().trace());
}

synth::SceneSpec tri_scene(int which) {
  synth::SceneSpec s;
  s.width = 160;
  s.height = 120;
  s.fov_deg = 60;
  s.sparse_stride = 8;
  if (which == 0) {
    s.rig.views = 4;
    s.rig.baseline = 0.3;
    s.surfaces = {synth::Primitive::plane(Vec3(0, 0, 5), Vec3(0.1, 0.05, -1)),
                  synth::Primitive::sphere(Vec3(0.4, 0.2, 3.0), 0.6),
                  synth::Primitive::box(Vec3(-1.2, -0.8, 2.5), Vec3(-0.4, 0.1, 3.2))};
  } else {
    s.rig.type = synth::RigType::kOutward360;
    s.rig.views = 6;
    s.rig.radius = 4.0;
    s.rig.height = 0.5;
    s.surfaces = {synth::Primitive::sphere(Vec3::Zero(), 1.0),
                  synth::Primitive::box(Vec3(0.5, -0.4, -0.4), Vec3(1.5, 0.4, 0.4))};
  }
  return s;
}

Outcome criterion_triangulation() {
  double max_exact = 0.0;
  size_t exact_points = 0;
  size_t noisy_points = 0;
  size_t within = 0;
  for (int which = 0; which < 2; ++which) {
    const auto scene = synth::generate_scene(tri_scene(which));
    SceneBundle bundle = scene.bundle;
    auto truth_of = [&](const CloudPoint& p) {
      const size_t vi = scene.bundle.view_index(*p.origin_view);
      const auto& t = scene.truth[vi];
      return t.point[t.index(p.origin_pixel->x, p.origin_pixel->y)];
    };

    bundle.correspondences = synth::oracle_correspondences(scene, 0.0, 0.0, 5);
    for (const auto& p : triangulate_corrs(bundle, kTriGatePx).points) {
      max_exact = std::max(max_exact, (p.position - truth_of(p)).norm());
      ++exact_points;
    }

    bundle.correspondences = synth::oracle_correspondences(scene, kTriNoisePx, 0.0, 6);
    // Views matched from each source pixel, for the per-point bound.
    std::map<std::pair<int, std::int64_t>, std::vector<int>> matched;
    for (const auto& set : bundle.correspondences) {
      const int w = scene.bundle.view(set.src_view).width;
      for (const auto& m : set.matches) {
        const auto key = std::pair(set.src_view, static_cast<std::int64_t>(m.src.y) * w +
                                                     static_cast<std::int64_t>(m.src.x));
        matched[key].push_back(set.dst_view);
      }
    }
    for (const auto& p : triangulate_corrs(bundle, kTriGatePx).points) {
      const Vec3 x = truth_of(p);
      const int w = scene.bundle.view(*p.origin_view).width;
      std::vector<const CameraView*> views = {&scene.bundle.view(*p.origin_view)};
      for (int d : matched[{*p.origin_view,
                            static_cast<std::int64_t>(p.origin_pixel->y) * w + p.origin_pixel->x}]) {
        views.push_back(&scene.bundle.view(d));
      }
      const double bound = noise_bound(x, views, kTriNoisePx);
      ++noisy_points;
      within += (p.position - x).norm() <= kTriBoundFactor * bound;
    }
  }
  const double fraction = noisy_points ? static_cast<double>(within) / noisy_points : 0.0;
  const bool pass = exact_points > 0 && max_exact < kTriExactTolM && noisy_points > 0 &&
                    fraction >= kTriMinFraction;
  return {pass, "noise-free max error " + fmt("%.3g", max_exact) + " m over " +
                    std::to_string(exact_points) + " points; 1 px noise: " +
                    fmt("%.4f", fraction) + " of " + std::to_string(noisy_points) +
                    " accepted points within 5x bound"};
}

// --- 4: f_scale -------------------------------------------------------------------

Outcome criterion_scale() {
  const Vec3 truth(0.5, 1.0, 2.0);
  double worst = 0.0;
  int passed = 0;
  for (int seed = 0; seed < kScaleSeeds; ++seed) {
    std::mt19937_64 rng(4000 + seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const CameraView view =
        look_at_view(seed, 140, 140, 80, 60, Vec3(u(rng), u(rng), u(rng)),
                     Vec3(u(rng), u(rng), 6.0 + u(rng)), Vec3::UnitY(), 160, 120);
    // Plane 5 m ahead, tilted 20 to 50 degrees about a random in-plane axis.
    // The fit regresses on noisy depth, so a near fronto-parallel plane leaves
    // too little depth spread to pin the z scale next to the offset.
    const double azimuth = std::acos(-1.0) * u(rng);
    const double tilt = (35.0 + 15.0 * u(rng)) * std::acos(-1.0) / 180.0;
    const Vec3 n_cam(std::sin(tilt) * std::cos(azimuth), std::sin(tilt) * std::sin(azimuth),
                     -std::cos(tilt));
    const Vec3 n = view.rotation().transpose() * n_cam;
    const synth::Primitive plane =
        synth::Primitive::plane(view.center() + 5.0 * view.rotation().row(2).transpose(), n);
    PointCloud multiview, depth;
    for (int y = 0; y < view.height; y += 2) {
      for (int x = 0; x < view.width; x += 2) {
        const Ray ray = pixel_ray(view, pixel_center({x, y}));
        const auto t = plane.intersect(ray.origin, ray.direction, 1e-9);
        if (!t) continue;
        const Vec3 world = ray.origin + *t * ray.direction;
        CloudPoint mv;
        mv.position = world;
        multiview.points.push_back(mv);
        CloudPoint dp;
        dp.position = view.to_camera(world).cwiseQuotient(truth) *
                      (1.0 + kScaleDepthNoise * g(rng));
        dp.source = PointSource::kMono;
        dp.origin_view = view.view_id;
        dp.origin_pixel = PixelIndex{x, y};
        depth.points.push_back(dp);
      }
    }
    const ScaleTransform tf = fit_scale(depth, multiview, view);
    double err = 0.0;
    for (int a = 0; a < 3; ++a) err = std::max(err, std::abs(tf.scale(a) / truth(a) - 1.0));
    worst = std::max(worst, err);
    passed += err <= kScaleRelTol;
  }
  return {passed == kScaleSeeds, std::to_string(passed) + "/" + std::to_string(kScaleSeeds) +
                                     " seeds within 2% (planes tilted 20-50 deg), worst per-axis relative error " +
                                     fmt("%.4f", worst)};
}

// --- 5: weights -------------------------------------------------------------------

bool within_ulps(double a, double b, int ulps) {
  if (a == b) return true;
  double x = b;
  for (int i = 0; i < ulps; ++i) x = std::nextafter(x, a);
  return a > b ? a <= x : a >= x;
}

Outcome criterion_weights() {
  size_t checks = 0;
  size_t bad = 0;
  for (int n = 2; n <= 64; ++n) {
    CovisMap m = CovisMap::zeros(0, n, 1, n);
    for (int c = 0; c < n; ++c) m.counts[c] = static_cast<std::uint16_t>(c);
    for (int c = 0; c < n; ++c) {
      ++checks;
      bad += weight_in(m, {c + 0.5, 0.5}) != 1.0 / (c + 1.0);
    }
  }
  const std::vector<std::pair<double, double>> table = {
      {0.0, 0.0}, {0.5, 0.0}, {0.7, 0.0}, {0.85, 0.5}, {1.0, 1.0}};
  std::string values;
  for (const auto& [s, expected] : table) {
    const double w = weight_out(s);
    ++checks;
    bad += !within_ulps(w, expected, kWeightUlps);
    values += (values.empty() ? "" : ", ") + fmt("%.17g", w);
  }
  return {bad == 0, std::to_string(checks) + " checks, " + std::to_string(bad) +
                        " off; w_out = {" + values + "}"};
}

// --- shared toy sphere scene ----------------------------------------------------------

PointCloud sphere_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    CloudPoint p;
    p.position = Vec3(g(rng), g(rng), g(rng)).normalized();
    c.points.push_back(p);
  }
  return c;
}

struct ToyRun {
  ProximityModel model;
  double train_acc = 0.0;
  double heldout_acc = 0.0;
};

ToyRun train_toy(std::uint64_t seed, std::uint32_t iterations) {
  const PointCloud pos = sphere_points(kToyPositives, seed);
  const double r_neg = default_negative_radius(pos);
  const TrainingSet ts = make_training_set(pos, 1.0, r_neg, seed + 100);
  TrainingOptions opt;
  opt.iterations = iterations;
  opt.learning_rate = kToyLr;
  opt.seed = seed;
  ToyRun run;
  run.model = train_classifier(ts, opt);
  run.train_acc = classification_accuracy(run.model, ts.positives.positions(), ts.negatives);

  // Held out: fresh surface points and fresh negatives at least r_neg off
  // the sphere, drawn in the same box.
  const auto held_pos = sphere_points(kToyPositives, seed + 200).positions();
  std::mt19937_64 rng(seed + 300);
  const Normalization& nz = ts.normalization;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> held_neg;
  while (held_neg.size() < held_pos.size()) {
    const Vec3 q = nz.invert(Vec3(u(rng), u(rng), u(rng)));
    if (std::abs(q.norm() - 1.0) >= r_neg) held_neg.push_back(q);
  }
  run.heldout_acc = classification_accuracy(run.model, held_pos, held_neg);
  return run;
}

ToyRun& toy_model() {
  static std::optional<ToyRun> run;
  if (!run) run = train_toy(0, kToyIterations);
  return *run;
}

struct RingScene {
  synth::SyntheticScene scene;
  SceneMaps maps;
};

const RingScene& ring_scene() {
  static std::optional<RingScene> ring;
  if (!ring) {
    const auto spec = synth::read_scene_spec(data_dir() / "sphere_ring.json");
    RingScene r{synth::generate_scene(spec), {}};
    r.maps = maps_for(r.scene, synth::oracle_correspondences(r.scene, 0.0, 0.0, spec.seed));
    ring = std::move(r);
  }
  return *ring;
}

// --- 6: loss and gradient ---------------------------------------------------------------

double pixel_edge_distance(const CameraView& v, const Vec3& g) {
  const auto p = project(v, g);
  if (!p) return std::numeric_limits<double>::infinity();
  const double fx = p->x - std::floor(p->x), fy = p->y - std::floor(p->y);
  return std::min({fx, 1.0 - fx, fy, 1.0 - fy});
}

// Sign pattern of both hidden layers at world point x.
std::vector<bool> relu_pattern(const ProximityModel& m, const Vec3& x) {
  const Vec3 n = m.normalization.apply(x);
  std::vector<bool> pattern;
  Eigen::VectorXd a = n;
  for (int l = 0; l < 2; ++l) {
    Eigen::VectorXd z = m.layers[l].weight * a + m.layers[l].bias;
    for (Eigen::Index i = 0; i < z.size(); ++i) pattern.push_back(z(i) > 0.0);
    a = z.cwiseMax(0.0);
  }
  return pattern;
}

Outcome criterion_loss_gradient() {
  const RingScene& ring = ring_scene();
  const ToyRun short_run = train_toy(11, 200);
  const ProximityModel& model = short_run.model;
  const CameraView& view = ring.scene.bundle.views[0];
  const CovisMap& map = ring.maps.refined[0];
  // A constructed score above 0.7 gives out-of-frustum Gaussians weight too.
  SceneCovisScore score;
  score.score = 0.85;
  const double w_out = std::max(0.0, (score.score - 0.7) / 0.3);

  std::mt19937_64 rng(6006);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GaussianSet g;
  for (int i = 0; i < kGradGaussians; ++i) {
    g.positions.push_back(model.normalization.invert(Vec3(u(rng), u(rng), u(rng))));
  }

  // Naive per-Gaussian sum.
  double naive = 0.0;
  for (const auto& x : g.positions) {
    const Vec3 c = view.to_camera(x);
    double w = w_out;
    if (c.z() > 0.0) {
      const double px = view.fx * c.x() / c.z() + view.cx;
      const double py = view.fy * c.y() / c.z() + view.cy;
      if (px >= 0.0 && py >= 0.0 && px < view.width && py < view.height) {
        const int count = map.counts[static_cast<size_t>(std::floor(py)) * view.width +
                                     static_cast<size_t>(std::floor(px))];
        w = 1.0 / (count + 1.0);
      }
    }
    naive += w * (1.0 - model.score(x));
  }
  naive /= static_cast<double>(g.positions.size());
  const double batched = proximity_loss(model, g, view, map, score).value;
  const double loss_diff = std::abs(batched - naive);

  const auto grad = proximity_loss_grad(model, g, view, map, score);
  const double h = kGradStepNormalized * model.normalization.scale;
  double worst = 0.0;
  int checked = 0;
  int excluded = 0;
  int kinks = 0;
  double worst_kink = 0.0;
  for (size_t i = 0; i < g.positions.size(); ++i) {
    const Vec3 x = g.positions[i];
    // Pixel-boundary cases: near an edge, or a stencil point changes pixel.
    bool boundary = pixel_edge_distance(view, x) < kGradEdgePx;
    const auto center = project(view, x);
    for (int a = 0; a < 3 && !boundary; ++a) {
      for (double sgn : {-1.0, 1.0}) {
        Vec3 y = x;
        y(a) += sgn * h;
        const auto p = project(view, y);
        if (center.has_value() != p.has_value()) boundary = true;
        if (center && p &&
            (std::floor(center->x) != std::floor(p->x) ||
             std::floor(center->y) != std::floor(p->y))) {
          boundary = true;
        }
      }
    }
    if (boundary) {
      ++excluded;
      continue;
    }
    // Stencils straddling a ReLU kink difference across a slope change.
    bool kink = false;
    const auto pattern = relu_pattern(model, x);
    for (int a = 0; a < 3 && !kink; ++a) {
      for (double sgn : {-1.0, 1.0}) {
        Vec3 y = x;
        y(a) += sgn * h;
        kink = kink || relu_pattern(model, y) != pattern;
      }
    }
    Vec3 fd;
    for (int a = 0; a < 3; ++a) {
      GaussianSet lo = g, hi = g;
      lo.positions[i](a) -= h;
      hi.positions[i](a) += h;
      fd(a) = (proximity_loss(model, hi, view, map, score).value -
               proximity_loss(model, lo, view, map, score).value) /
              (2.0 * h);
    }
    const double err = fd.norm() == 0.0 && grad[i].norm() == 0.0
                           ? 0.0
                           : (grad[i] - fd).norm() / std::max(fd.norm(), grad[i].norm());
    if (kink) {
      ++kinks;
      worst_kink = std::max(worst_kink, err);
      continue;
    }
    worst = std::max(worst, err);
    ++checked;
  }
  const bool pass = loss_diff <= kLossTol && worst < kGradRelTol && checked > 0;
  return {pass, "|batched - naive| = " + fmt("%.3g", loss_diff) + "; max gradient rel. error " +
                    fmt("%.3g", worst) + " over " + std::to_string(checked) + " Gaussians (" +
                    std::to_string(excluded) + " at pixel boundaries excluded, " +
                    std::to_string(kinks) + " with a ReLU kink inside the stencil excluded, " +
                    "max error there " + fmt("%.3g", worst_kink) + ")"};
}

// --- 7: classifier ------------------------------------------------------------------

Outcome criterion_classifier() {
  int ok = 0;
  std::string accs;
  for (int seed = 0; seed < kToySeeds; ++seed) {
    const ToyRun run = seed == 0 ? toy_model() : train_toy(seed, kToyIterations);
    ok += run.train_acc >= kToyTrainAcc && run.heldout_acc >= kToyHeldoutAcc;
    accs += (accs.empty() ? "" : ", ") + fmt("%.3f", run.train_acc) + "/" +
            fmt("%.3f", run.heldout_acc);
  }
  return {ok == kToySeeds, std::to_string(ok) + "/" + std::to_string(kToySeeds) +
                               " seeds; train/held-out accuracy: " + accs};
}

// --- 8: descent demo -------------------------------------------------------------------

Outcome criterion_descent() {
  const RingScene& ring = ring_scene();
  const ProximityModel& model = toy_model().model;
  std::mt19937_64 rng(8008);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> start;
  for (int i = 0; i < kDemoPoints; ++i) {
    start.push_back(model.normalization.invert(Vec3(u(rng), u(rng), u(rng))));
  }
  auto mean_distance = [](const std::vector<Vec3>& pts) {
    double s = 0.0;
    for (const auto& p : pts) s += std::abs(p.norm() - 1.0);
    return s / static_cast<double>(pts.size());
  };
  DescentOptions opt;
  opt.steps = kDemoSteps;
  const auto end = descend_proximity(model, start, ring.scene.bundle.views, ring.maps.refined,
                                     ring.maps.score, opt);
  const double before = mean_distance(start), after = mean_distance(end);
  const double reduction = 1.0 - after / before;
  return {reduction >= kDemoMinReduction,
          "mean distance to surface " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) +
              " (reduction " + fmt("%.3f", reduction) + ", S = " +
              fmt("%.3f", ring.maps.score.score) + ")"};
}

// --- 9: mono-view recovery -----------------------------------------------------------------

Outcome criterion_mono_view() {
  const fs::path root = g_scratch / "mono_wall";
  cli::RunConfig c;
  c.spec = data_dir() / "mono_wall.json";
  c.out = root / "scene";
  cli::cmd_synth(c);
  c = cli::RunConfig{};
  c.scene = root / "scene";
  c.out = root / "out";
  cli::cmd_comap(c);
  const json report = cli::cmd_enhance(c);

  const auto spec = synth::read_scene_spec(data_dir() / "mono_wall.json");
  const synth::Primitive& wall = spec.surfaces.at(1);
  const PointCloud p_final = io::read_ply(root / "out" / "enhance" / "p_final.ply");
  const PointCloud p_u_low = io::read_ply(root / "out" / "enhance" / "p_u_low.ply");
  std::vector<Vec3> wall_mono;
  for (const auto& p : p_final.points) {
    if (p.source == PointSource::kMono && wall.distance(p.position) < kWallTolM) {
      wall_mono.push_back(p.position);
    }
  }
  size_t wall_low = 0;
  for (const auto& p : p_u_low.points) wall_low += wall.distance(p.position) < kWallTolM;

  const SceneBundle bundle = io::read_colmap_reconstruction(root / "scene" / "sparse");
  const int n = static_cast<int>(bundle.views.size());
  size_t in_frustum = 0;
  size_t not_one = 0;
  size_t unseen = 0;
  for (const auto& x : wall_mono) {
    bool seen = false;
    for (const auto& v : bundle.views) {
      const CovisMap map = io::read_covis_map(
          root / "out" / "comap" / ("covis_" + std::to_string(v.view_id) + "_refined.pgm"),
          v.view_id, n);
      const GaussianTerm t = gaussian_weight(x, v, map, weight_out(report["S"].get<double>()));
      if (!t.in_frustum) continue;
      seen = true;
      ++in_frustum;
      not_one += t.weight != 1.0;
    }
    unseen += !seen;
  }
  const auto reported_mono = report["P_final_sources"]["mono"].get<size_t>();
  const auto reported_low_mono = report["P_u_low_sources"]["mono"].get<size_t>();
  const bool pass = reported_mono > 0 && !wall_mono.empty() && wall_low == 0 &&
                    reported_low_mono == 0 && unseen == 0 && not_one == 0;
  return {pass, "report: P_final mono " + std::to_string(reported_mono) + ", P_u^low mono " +
                    std::to_string(reported_low_mono) + "; wall points: " +
                    std::to_string(wall_mono.size()) + " mono in P_final, " +
                    std::to_string(wall_low) + " in P_u^low; w_in = 1 for " +
                    std::to_string(in_frustum - not_one) + "/" + std::to_string(in_frustum) +
                    " in-frustum terms"};
}

// --- 10: determinism and round trips ------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + COMAP_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return files;
}

std::string round_trip_failures() {
  std::string failed;
  const fs::path dir = g_scratch / "round_trip";
  fs::create_directories(dir);
  std::mt19937_64 rng(10010);
  std::uniform_real_distribution<double> u(-5.0, 5.0);

  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    CloudPoint p;
    p.position = Vec3(u(rng), u(rng), u(rng));
    p.color = Rgb{static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng()),
                  static_cast<std::uint8_t>(rng())};
    p.source = static_cast<PointSource>(rng() % 3);
    p.id = i + 1;
    cloud.points.push_back(p);
  }
  for (bool binary : {true, false}) {
    io::write_ply(cloud, dir / "c.ply", binary);
    const PointCloud r = io::read_ply(dir / "c.ply");
    bool ok = r.size() == cloud.size();
    for (size_t i = 0; ok && i < r.size(); ++i) {
      ok = r.points[i].position == cloud.points[i].position &&
           r.points[i].color == cloud.points[i].color &&
           r.points[i].source == cloud.points[i].source;
    }
    if (!ok) failed += binary ? " ply-binary" : " ply-ascii";
  }

  std::vector<float> depth(64 * 48);
  for (auto& d : depth) d = static_cast<float>(1.0 + std::abs(u(rng)));
  depth[5] = 0.0f;
  const DepthMap dm = make_depth_map(64, 48, depth);
  io::write_depth_map(dm, dir / "d.pfm");
  const DepthMap dr = io::read_depth_map(dir / "d.pfm");
  if (dr.values != dm.values || dr.valid != dm.valid) failed += " pfm";

  CovisMap cm = CovisMap::zeros(3, 64, 48, 6);
  for (auto& c : cm.counts) c = static_cast<std::uint16_t>(rng() % 6);
  io::write_covis_map_image(cm, dir / "covis_3");
  if (!(io::read_covis_map(dir / "covis_3.pgm", 3, 6) == cm)) failed += " pgm";

  std::vector<CameraView> views;
  for (int i = 0; i < 3; ++i) {
    views.push_back(look_at_view(i, 60, 61, 32, 24, Vec3(u(rng), u(rng), -6), Vec3::Zero(),
                                 Vec3::UnitY(), 64, 48));
  }
  CorrespondenceSet set{0, 2, {}};
  for (int y = 0; y < 48; y += 3) {
    for (int x = 0; x < 64; x += 3) {
      set.matches.push_back({{x + 0.3, y + 0.7}, {std::abs(u(rng)) * 6, std::abs(u(rng)) * 4},
                             std::abs(u(rng)) / 5.0});
    }
  }
  io::write_correspondences(dir / "corr_0_2.jsonl", set);
  const CorrespondenceSet sr = io::read_correspondences(dir / "corr_0_2.jsonl", views);
  bool corr_ok = sr.matches.size() == set.matches.size();
  for (size_t i = 0; corr_ok && i < sr.matches.size(); ++i) {
    corr_ok = std::abs(sr.matches[i].src.x - set.matches[i].src.x) < 1e-12 &&
              std::abs(sr.matches[i].dst.y - set.matches[i].dst.y) < 1e-12 &&
              sr.matches[i].conf == set.matches[i].conf;
  }
  if (!corr_ok) failed += " jsonl";

  io::write_colmap_reconstruction(dir / "sparse", views, cloud);
  const SceneBundle b = io::read_colmap_reconstruction(dir / "sparse");
  bool colmap_ok = b.views.size() == views.size() && b.colmap_points.size() == cloud.size();
  for (size_t i = 0; colmap_ok && i < views.size(); ++i) {
    colmap_ok = (b.views[i].world_to_camera - views[i].world_to_camera).norm() < 1e-12 &&
                b.views[i].fy == views[i].fy;
  }
  for (size_t i = 0; colmap_ok && i < cloud.size(); ++i) {
    colmap_ok = b.colmap_points.points[i].position == cloud.points[i].position;
  }
  if (!colmap_ok) failed += " colmap";

  const ProximityModel& m = toy_model().model;
  m.save(dir / "m.cmpx");
  if (ProximityModel::load(dir / "m.cmpx").serialize() != m.serialize()) failed += " cmpx";
  return failed;
}

Outcome criterion_determinism() {
  const fs::path root = g_scratch / "determinism";
  const fs::path scene = root / "scene";
  const fs::path out = root / "out";
  fs::create_directories(root);
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  std::ofstream(root / "config.json")
      << R"({"iterations": 100, "steps": 50, "num_points": 100, "snapshot_every": 25, "holdout": 0.2})";
  const std::string s = " --scene " + q(scene) + " --out " + q(out);
  const std::string cfg = " --config " + q(root / "config.json");
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "synth --spec " + q(data_dir() / "mono_wall.json") + " --out " + q(scene)},
      {"comap", "comap" + s},
      {"enhance", "enhance" + s},
      {"train-proximity", "train-proximity --out " + q(out) + cfg},
      {"eval-loss", "eval-loss" + s + cfg + " --gaussians " + q(out / "enhance" / "p_final.ply")},
      {"optimize-demo", "optimize-demo" + s + cfg},
  };
  std::string diverged;
  int files = 0;
  for (const auto& [name, args] : stages) {
    if (run_cli(args + " --seed 17 --threads 1") != 0) {
      diverged += " " + name + "(exit)";
      continue;
    }
    const fs::path where = name == "synth" ? scene : out;
    const auto first = snapshot(where);
    if (run_cli(args + " --seed 17 --threads 4") != 0) {
      diverged += " " + name + "(exit)";
      continue;
    }
    const auto second = snapshot(where);
    if (first != second) diverged += " " + name;
    files += static_cast<int>(first.size());
  }
  const std::string rt = round_trip_failures();
  const bool pass = diverged.empty() && rt.empty();
  return {pass, "6 subcommands rerun (threads 1 vs 4), " + std::to_string(files) +
                    " artifacts compared" + (diverged.empty() ? "" : ", differing:" + diverged) +
                    "; round trips ply/pfm/pgm/jsonl/colmap/cmpx" +
                    (rt.empty() ? " ok" : " failed:" + rt)};
}

}  // namespace

int main() {
  log::set_level(log::Level::kQuiet);
  g_scratch = fs::temp_directory_path() /
              ("comap_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(g_scratch);

  run_criterion(1, "covisibility maps equal brute-force counts", kCovisLimitS,
                criterion_covisibility);
  run_criterion(2, "strict merge filter equals O(n^2) filter", kMergeLimitS, criterion_merge);
  run_criterion(3, "triangulation fidelity", kTriLimitS, criterion_triangulation);
  run_criterion(4, "anisotropic scale recovery", kScaleLimitS, criterion_scale);
  run_criterion(5, "weight formulas exact", 0.0, criterion_weights);
  run_criterion(6, "loss decomposition and gradients", kGradLimitS, criterion_loss_gradient);
  run_criterion(7, "classifier convergence on toy sphere", kToyLimitS, criterion_classifier);
  run_criterion(8, "proximity descent demo", kDemoLimitS, criterion_descent);
  run_criterion(9, "mono-view wall recovery", 0.0, criterion_mono_view);
  run_criterion(10, "determinism and format round trips", kDeterminismLimitS,
                criterion_determinism);

  std::error_code ec;
  fs::remove_all(g_scratch, ec);
  std::printf("%d/10 criteria passed\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
