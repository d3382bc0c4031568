#include "comap/proximity.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "comap/error.hpp"
#include "comap/log.hpp"
#include "comap/spatial_index.hpp"

namespace comap {

namespace {

constexpr double kMaxScore = 0.99999999999999989;  // nextafter(1, 0)
constexpr double kMinScore = std::numeric_limits<double>::min();

double logistic(double z) {
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                            : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, kMinScore, kMaxScore);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

Eigen::MatrixXd to_normalized(const Normalization& norm,
                              std::span<const Vec3> points) {
  Eigen::MatrixXd x(3, static_cast<Eigen::Index>(points.size()));
  for (size_t i = 0; i < points.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = norm.apply(points[i]);
  }
  return x;
}

struct Activations {
  Eigen::MatrixXd z1, a1, z2, a2;
  Eigen::RowVectorXd logits;
};

// Products run on fixed-width zero-padded column blocks so every point takes
// the same kernel path, making its result independent of the batch it is
// evaluated in.
constexpr Eigen::Index kBlockCols = 64;

Eigen::MatrixXd blocked_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::Index n = b.cols();
  Eigen::MatrixXd out(a.rows(), n);
  Eigen::MatrixXd in_block = Eigen::MatrixXd::Zero(b.rows(), kBlockCols);
  Eigen::MatrixXd out_block(a.rows(), kBlockCols);
  for (Eigen::Index c = 0; c < n; c += kBlockCols) {
    const Eigen::Index m = std::min(kBlockCols, n - c);
    if (m < kBlockCols) in_block.setZero();
    in_block.leftCols(m) = b.middleCols(c, m);
    out_block.noalias() = a * in_block;
    out.middleCols(c, m) = out_block.leftCols(m);
  }
  return out;
}

Activations forward(const std::array<DenseLayer, 3>& layers,
                    const Eigen::MatrixXd& x) {
  Activations act;
  act.z1 = blocked_product(layers[0].weight, x).colwise() + layers[0].bias;
  act.a1 = act.z1.cwiseMax(0.0);
  act.z2 = blocked_product(layers[1].weight, act.a1).colwise() + layers[1].bias;
  act.a2 = act.z2.cwiseMax(0.0);
  act.logits = blocked_product(layers[2].weight, act.a2).colwise() + layers[2].bias;
  return act;
}

void round_to_float(std::array<DenseLayer, 3>& layers) {
  for (auto& l : layers) {
    l.weight = l.weight.cast<float>().cast<double>();
    l.bias = l.bias.cast<float>().cast<double>();
  }
}

}  // namespace

ProximityModel::ProximityModel() {
  const int dims[4] = {kInputDim, kHiddenDim, kHiddenDim, 1};
  for (int l = 0; l < 3; ++l) {
    layers[l].weight = Eigen::MatrixXd::Zero(dims[l + 1], dims[l]);
    layers[l].bias = Eigen::VectorXd::Zero(dims[l + 1]);
  }
}

ProximityModel ProximityModel::initialized(std::uint64_t seed,
                                           const Normalization& norm) {
  ProximityModel m;
  m.normalization = norm;
  std::mt19937_64 rng(seed);
  for (auto& layer : m.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = dist(rng);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = dist(rng);
  }
  return m;
}

std::vector<double> ProximityModel::score_batch(std::span<const Vec3> points) const {
  std::vector<double> out(points.size());
  if (points.empty()) return out;
  const Activations act = forward(layers, to_normalized(normalization, points));
  for (size_t i = 0; i < points.size(); ++i) {
    out[i] = logistic(act.logits(static_cast<Eigen::Index>(i)));
  }
  return out;
}

double ProximityModel::score(const Vec3& p) const {
  return score_batch(std::span<const Vec3>(&p, 1))[0];
}

std::vector<double> ProximityModel::score_batch_with_gradient(
    std::span<const Vec3> points, std::vector<Vec3>& gradients) const {
  gradients.assign(points.size(), Vec3::Zero());
  std::vector<double> out(points.size());
  if (points.empty()) return out;
  const Activations act = forward(layers, to_normalized(normalization, points));
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::RowVectorXd ds(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = act.logits(i);
    const double s = 1.0 / (1.0 + std::exp(-z));
    out[static_cast<size_t>(i)] = logistic(z);
    ds(i) = std::isfinite(s) ? s * (1.0 - s) : 0.0;
  }
  const Eigen::MatrixXd d2 =
      (layers[2].weight.transpose() * ds).cwiseProduct(
          (act.z2.array() > 0.0).cast<double>().matrix());
  const Eigen::MatrixXd d1 =
      blocked_product(layers[1].weight.transpose(), d2).cwiseProduct(
          (act.z1.array() > 0.0).cast<double>().matrix());
  const Eigen::MatrixXd dx = blocked_product(layers[0].weight.transpose(), d1);
  for (Eigen::Index i = 0; i < n; ++i) {
    gradients[static_cast<size_t>(i)] = dx.col(i) / normalization.scale;
  }
  return out;
}

// --- serialization ------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'C', 'M', 'P', 'X', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> bytes, size_t& off) {
  if (off + sizeof(T) > bytes.size()) {
    fail(ErrorKind::kMalformedRecord, "model file truncated");
  }
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> ProximityModel::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  put<std::uint32_t>(out, 3);
  for (const auto& l : layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
  }
  for (int a = 0; a < 3; ++a) put<double>(out, normalization.center(a));
  put<double>(out, normalization.scale);
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        put<float>(out, static_cast<float>(l.weight(r, c)));
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
      put<float>(out, static_cast<float>(l.bias(r)));
    }
  }
  put<std::uint32_t>(out, meta.iterations);
  put<double>(out, meta.learning_rate);
  put<std::uint64_t>(out, meta.seed);
  put<double>(out, meta.final_loss);
  return out;
}

ProximityModel ProximityModel::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::kMalformedHeader, "not a CMPX1 model");
  }
  size_t off = sizeof(kMagic);
  ProximityModel m;
  if (take<std::uint32_t>(bytes, off) != 3) {
    fail(ErrorKind::kMalformedRecord, "model must have 3 layers");
  }
  for (const auto& l : m.layers) {
    const auto in = take<std::uint32_t>(bytes, off);
    const auto out = take<std::uint32_t>(bytes, off);
    if (in != l.weight.cols() || out != l.weight.rows()) {
      fail(ErrorKind::kMalformedRecord, "model architecture must be 3-128-128-1");
    }
  }
  for (int a = 0; a < 3; ++a) m.normalization.center(a) = take<double>(bytes, off);
  m.normalization.scale = take<double>(bytes, off);
  if (!m.normalization.center.allFinite() || !(m.normalization.scale > 0.0) ||
      !std::isfinite(m.normalization.scale)) {
    fail(ErrorKind::kMalformedRecord, "invalid normalization");
  }
  for (auto& l : m.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        l.weight(r, c) = take<float>(bytes, off);
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = take<float>(bytes, off);
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      fail(ErrorKind::kMalformedRecord, "non-finite weight");
    }
  }
  m.meta.iterations = take<std::uint32_t>(bytes, off);
  m.meta.learning_rate = take<double>(bytes, off);
  m.meta.seed = take<std::uint64_t>(bytes, off);
  m.meta.final_loss = take<double>(bytes, off);
  if (off != bytes.size()) fail(ErrorKind::kMalformedRecord, "trailing bytes in model");
  return m;
}

void ProximityModel::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
}

ProximityModel ProximityModel::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::kMissingFile, path.string() + " does not exist");
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (!in.eof() && !in) fail(ErrorKind::kIoError, "cannot read " + path.string());
  return deserialize(bytes);
}

// --- training -----------------------------------------------------------------

double default_negative_radius(const PointCloud& positives) {
  const Bounds b = compute_bounds(positives.positions());
  return 0.02 * b.extent().norm();
}

TrainingSet make_training_set(const PointCloud& p_final, double ratio,
                              double r_neg, std::uint64_t seed) {
  if (p_final.empty()) fail(ErrorKind::kEmptyInput, "P_final is empty");
  if (!(ratio >= 0.0) || !(r_neg >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "ratio and r_neg must be >= 0");
  }
  TrainingSet ts;
  ts.positives = p_final;
  const auto positions = p_final.positions();
  const Bounds b = compute_bounds(positions);
  const Vec3 pad = (0.2 * b.extent()).cwiseMax(Vec3::Constant(2.0 * r_neg));
  const Vec3 lo = b.min - pad;
  const Vec3 hi = b.max + pad;
  ts.normalization.center = 0.5 * (lo + hi);
  ts.normalization.scale = 0.5 * (hi - lo).maxCoeff();
  if (!(ts.normalization.scale > 0.0)) ts.normalization.scale = 1.0;

  const auto wanted = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(p_final.size())));
  const KdTree tree(positions);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo.x(), hi.x());
  std::uniform_real_distribution<double> uy(lo.y(), hi.y());
  std::uniform_real_distribution<double> uz(lo.z(), hi.z());
  size_t attempts = 0;
  ts.negatives.reserve(wanted);
  while (ts.negatives.size() < wanted) {
    const Vec3 q(ux(rng), uy(rng), uz(rng));
    ++attempts;
    if (tree.nearest(q).distance >= r_neg) ts.negatives.push_back(q);
    if (attempts >= 1000 &&
        static_cast<double>(ts.negatives.size()) < 0.01 * static_cast<double>(attempts)) {
      fail(ErrorKind::kSamplingStarvation,
           "negative acceptance below 1%; r_neg too large for the scene");
    }
  }
  return ts;
}

namespace {

struct AdamState {
  std::array<DenseLayer, 3> m, v;
};

AdamState zero_like(const std::array<DenseLayer, 3>& layers) {
  AdamState s;
  for (int l = 0; l < 3; ++l) {
    s.m[l].weight = Eigen::MatrixXd::Zero(layers[l].weight.rows(), layers[l].weight.cols());
    s.m[l].bias = Eigen::VectorXd::Zero(layers[l].bias.size());
    s.v[l] = s.m[l];
  }
  return s;
}

double bce_from_logits(const Eigen::RowVectorXd& logits,
                       const Eigen::RowVectorXd& labels) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    sum += softplus(logits(i)) - labels(i) * logits(i);
  }
  return sum / static_cast<double>(logits.size());
}

}  // namespace

ProximityModel train_classifier(const TrainingSet& ts,
                                const TrainingOptions& options,
                                std::vector<double>* loss_curve) {
  if (ts.positives.empty()) fail(ErrorKind::kEmptyInput, "no positives");
  if (!(options.learning_rate > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "learning rate must be positive");
  }
  ProximityModel model = ProximityModel::initialized(options.seed, ts.normalization);

  std::vector<Vec3> all = ts.positives.positions();
  all.insert(all.end(), ts.negatives.begin(), ts.negatives.end());
  const Eigen::MatrixXd x = to_normalized(ts.normalization, all);
  const auto n = static_cast<Eigen::Index>(all.size());
  Eigen::RowVectorXd labels = Eigen::RowVectorXd::Zero(n);
  labels.head(static_cast<Eigen::Index>(ts.positives.size())).setOnes();

  AdamState adam = zero_like(model.layers);
  std::array<DenseLayer, 3> grads = adam.m;
  if (loss_curve) loss_curve->clear();

  // Buffers reused across iterations.
  const auto h = static_cast<Eigen::Index>(ProximityModel::kHiddenDim);
  Eigen::MatrixXd z1(h, n), a1(h, n), z2(h, n), a2(h, n), dz1(h, n), dz2(h, n);
  Eigen::RowVectorXd logits(n), dz3(n);

  double b1t = 1.0;
  double b2t = 1.0;
  for (std::uint32_t it = 0; it < options.iterations; ++it) {
    auto& l = model.layers;
    z1.noalias() = l[0].weight * x;
    z1.colwise() += l[0].bias;
    a1 = z1.cwiseMax(0.0);
    z2.noalias() = l[1].weight * a1;
    z2.colwise() += l[1].bias;
    a2 = z2.cwiseMax(0.0);
    logits.noalias() = l[2].weight * a2;
    logits.array() += l[2].bias(0);

    const double loss = bce_from_logits(logits, labels);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::kNonFiniteLoss, "loss diverged at iteration " + std::to_string(it));
    }
    if (loss_curve) loss_curve->push_back(loss);

    for (Eigen::Index i = 0; i < n; ++i) {
      dz3(i) = (logistic(logits(i)) - labels(i)) / static_cast<double>(n);
    }
    grads[2].weight.noalias() = dz3 * a2.transpose();
    grads[2].bias(0) = dz3.sum();
    dz2.noalias() = l[2].weight.transpose() * dz3;
    dz2.array() *= (z2.array() > 0.0).cast<double>();
    grads[1].weight.noalias() = dz2 * a1.transpose();
    grads[1].bias = dz2.rowwise().sum();
    dz1.noalias() = l[1].weight.transpose() * dz2;
    dz1.array() *= (z1.array() > 0.0).cast<double>();
    grads[0].weight.noalias() = dz1 * x.transpose();
    grads[0].bias = dz1.rowwise().sum();

    b1t *= options.beta1;
    b2t *= options.beta2;
    const double lr_t = options.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    const double eps_t = options.adam_epsilon * std::sqrt(1.0 - b2t);
    for (int k = 0; k < 3; ++k) {
      auto step = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = options.beta1 * m + (1.0 - options.beta1) * g;
        v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
        param.array() -= lr_t * m.array() / (v.array().sqrt() + eps_t);
      };
      step(l[k].weight, adam.m[k].weight, adam.v[k].weight, grads[k].weight);
      step(l[k].bias, adam.m[k].bias, adam.v[k].bias, grads[k].bias);
    }
  }

  round_to_float(model.layers);
  const double final_loss = bce_from_logits(forward(model.layers, x).logits, labels);
  if (!std::isfinite(final_loss)) fail(ErrorKind::kNonFiniteLoss, "final loss diverged");
  model.meta = {options.iterations, options.learning_rate, options.seed, final_loss};
  log::info("train_classifier")
      .kv("iterations", options.iterations)
      .kv("samples", n)
      .kv("final_loss", final_loss);
  return model;
}

double binary_cross_entropy(const ProximityModel& model,
                            std::span<const Vec3> positives,
                            std::span<const Vec3> negatives) {
  std::vector<Vec3> all(positives.begin(), positives.end());
  all.insert(all.end(), negatives.begin(), negatives.end());
  if (all.empty()) fail(ErrorKind::kEmptyInput, "no samples");
  const Activations act = forward(model.layers, to_normalized(model.normalization, all));
  Eigen::RowVectorXd labels = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(all.size()));
  labels.head(static_cast<Eigen::Index>(positives.size())).setOnes();
  return bce_from_logits(act.logits, labels);
}

double classification_accuracy(const ProximityModel& model,
                               std::span<const Vec3> positives,
                               std::span<const Vec3> negatives,
                               double threshold) {
  const size_t total = positives.size() + negatives.size();
  if (total == 0) fail(ErrorKind::kEmptyInput, "no samples");
  size_t correct = 0;
  for (double s : model.score_batch(positives)) correct += s >= threshold ? 1 : 0;
  for (double s : model.score_batch(negatives)) correct += s < threshold ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

// --- weighted proximity loss ------------------------------------------------

double weight_in(const CovisMap& map, const Pixel& pixel) {
  return 1.0 / (static_cast<double>(covis_at(map, pixel)) + 1.0);
}

double weight_out(double scene_score) {
  return std::max(0.0, (scene_score - 0.7) / 0.3);
}

double weight_out(const SceneCovisScore& score) { return weight_out(score.score); }

GaussianTerm gaussian_weight(const Vec3& g, const CameraView& view,
                             const CovisMap& map, double w_out) {
  GaussianTerm t;
  const auto proj = project(view, g);
  t.in_frustum = proj.has_value();
  t.weight = t.in_frustum ? weight_in(map, proj->pixel()) : w_out;
  return t;
}

namespace {

void check_map(const CameraView& view, const CovisMap& map) {
  if (map.view_id != view.view_id || map.width != view.width ||
      map.height != view.height) {
    fail(ErrorKind::kMapViewMismatch, "covisibility map does not belong to the view");
  }
}

}  // namespace

ProximityLoss proximity_loss_from_scores(const GaussianSet& gaussians,
                                         std::span<const double> scores,
                                         const CameraView& view,
                                         const CovisMap& map,
                                         const SceneCovisScore& score) {
  if (gaussians.positions.empty()) fail(ErrorKind::kEmptyInput, "no Gaussians");
  if (scores.size() != gaussians.positions.size()) {
    fail(ErrorKind::kInvalidArgument, "one score per Gaussian required");
  }
  check_map(view, map);
  const double w_out = weight_out(score);
  ProximityLoss out;
  out.terms.reserve(scores.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    GaussianTerm t = gaussian_weight(gaussians.positions[i], view, map, w_out);
    t.score = scores[i];
    t.contribution = t.weight * (1.0 - t.score);
    sum += t.contribution;
    out.terms.push_back(t);
  }
  out.value = sum / static_cast<double>(scores.size());
  return out;
}

ProximityLoss proximity_loss(const ProximityModel& model,
                             const GaussianSet& gaussians,
                             const CameraView& view, const CovisMap& map,
                             const SceneCovisScore& score) {
  const auto scores = model.score_batch(gaussians.positions);
  return proximity_loss_from_scores(gaussians, scores, view, map, score);
}

std::vector<Vec3> proximity_loss_grad(const ProximityModel& model,
                                      const GaussianSet& gaussians,
                                      const CameraView& view,
                                      const CovisMap& map,
                                      const SceneCovisScore& score) {
  if (gaussians.positions.empty()) fail(ErrorKind::kEmptyInput, "no Gaussians");
  check_map(view, map);
  std::vector<Vec3> ds;
  model.score_batch_with_gradient(gaussians.positions, ds);
  const double w_out = weight_out(score);
  const double inv_n = 1.0 / static_cast<double>(gaussians.positions.size());
  std::vector<Vec3> out(gaussians.positions.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double w = gaussian_weight(gaussians.positions[i], view, map, w_out).weight;
    out[i] = w == 0.0 ? Vec3::Zero() : Vec3(-w * inv_n * ds[i]);
  }
  return out;
}

double total_objective(double l1, double dssim, double lambda, double l_p) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "lambda must lie in [0, 1]");
  }
  return (1.0 - lambda) * l1 + lambda * dssim + l_p;
}

Classification classify_cloud(const ProximityModel& model,
                              const PointCloud& cloud, double threshold) {
  Classification c;
  c.scores = model.score_batch(cloud.positions());
  c.near.resize(c.scores.size());
  c.colored = cloud;
  size_t near = 0;
  for (size_t i = 0; i < c.scores.size(); ++i) {
    c.near[i] = c.scores[i] >= threshold;
    near += c.near[i] ? 1 : 0;
    c.colored.points[i].color = c.near[i] ? Rgb{0, 0, 255} : Rgb{255, 0, 0};
  }
  c.near_fraction =
      cloud.empty() ? 0.0 : static_cast<double>(near) / static_cast<double>(cloud.size());
  return c;
}

std::vector<Vec3> descend_proximity(
    const ProximityModel& model, std::vector<Vec3> positions,
    std::span<const CameraView> views, std::span<const CovisMap> maps,
    const SceneCovisScore& score, const DescentOptions& options,
    const std::function<void(int, const std::vector<Vec3>&)>& on_step) {
  if (views.empty() || views.size() != maps.size()) {
    fail(ErrorKind::kMapViewMismatch, "need one map per view");
  }
  if (options.steps < 0 || !(options.step_size >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "steps and step_size must be >= 0");
  }
  if (on_step) on_step(0, positions);
  if (positions.empty()) return positions;
  const double world_step = options.step_size * model.normalization.scale;
  GaussianSet g;
  for (int step = 1; step <= options.steps; ++step) {
    const size_t k = static_cast<size_t>(step - 1) % views.size();
    g.positions = positions;
    const auto grad = proximity_loss_grad(model, g, views[k], maps[k], score);
    for (size_t i = 0; i < positions.size(); ++i) {
      const double norm = grad[i].norm();
      if (norm > 0.0) positions[i] -= world_step * grad[i] / norm;
    }
    if (on_step) on_step(step, positions);
  }
  return positions;
}

}  // namespace comap
