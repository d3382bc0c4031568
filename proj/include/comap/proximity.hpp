#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "comap/camera.hpp"
#include "comap/covis_map.hpp"
#include "comap/point_cloud.hpp"

namespace comap {

// Affine map taking scene bounds into [-1, 1]^3: (p - center) / scale.
struct Normalization {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) / scale; }
  Vec3 invert(const Vec3& q) const { return q * scale + center; }
};

struct TrainMeta {
  std::uint32_t iterations = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// Proximity classifier 3 -> 128 -> 128 -> 1 with ReLU hidden activations
// and a logistic output.
class ProximityModel {
 public:
  static constexpr int kInputDim = 3;
  static constexpr int kHiddenDim = 128;

  ProximityModel();

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static ProximityModel initialized(std::uint64_t seed, const Normalization& norm);

  double score(const Vec3& p) const;
  std::vector<double> score_batch(std::span<const Vec3> points) const;
  // Scores plus d score / d position (world frame).
  std::vector<double> score_batch_with_gradient(std::span<const Vec3> points,
                                                std::vector<Vec3>& gradients) const;

  std::array<DenseLayer, 3> layers;
  Normalization normalization;
  TrainMeta meta;

  // Versioned little-endian binary ("CMPX1").
  std::vector<std::uint8_t> serialize() const;
  static ProximityModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ProximityModel load(const std::filesystem::path& path);
};

struct TrainingSet {
  PointCloud positives;
  std::vector<Vec3> negatives;
  Normalization normalization;
};

struct TrainingOptions {
  std::uint32_t iterations = 1000;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

// Default negative exclusion radius: 2% of the positives' bounding diagonal.
double default_negative_radius(const PointCloud& positives);

// Negatives drawn uniformly in the positives' box (inflated by 20% per side,
// and by at least 2 r_neg) and kept when no positive is closer than r_neg.
TrainingSet make_training_set(const PointCloud& p_final, double ratio,
                              double r_neg, std::uint64_t seed);

// Full-batch Adam on mean binary cross-entropy. `loss_curve`, when given,
// receives the loss before each update. Weights are rounded to float32 at
// the end so the serialized model is exact.
ProximityModel train_classifier(const TrainingSet& ts,
                                const TrainingOptions& options,
                                std::vector<double>* loss_curve = nullptr);

// Mean BCE of the model on labeled points.
double binary_cross_entropy(const ProximityModel& model,
                            std::span<const Vec3> positives,
                            std::span<const Vec3> negatives);

double classification_accuracy(const ProximityModel& model,
                               std::span<const Vec3> positives,
                               std::span<const Vec3> negatives,
                               double threshold = 0.5);

// --- covisibility-weighted proximity loss ---------------------------------

struct GaussianSet {
  std::vector<Vec3> positions;
};

double weight_in(const CovisMap& map, const Pixel& pixel);
double weight_out(const SceneCovisScore& score);
double weight_out(double scene_score);

struct GaussianTerm {
  bool in_frustum = false;
  double weight = 0.0;
  double score = 0.0;
  double contribution = 0.0;  // weight * (1 - score)
};

struct ProximityLoss {
  double value = 0.0;
  std::vector<GaussianTerm> terms;
};

// Frustum indicator and weight of one Gaussian for this view.
GaussianTerm gaussian_weight(const Vec3& g, const CameraView& view,
                             const CovisMap& map, double w_out);

ProximityLoss proximity_loss_from_scores(const GaussianSet& gaussians,
                                         std::span<const double> scores,
                                         const CameraView& view,
                                         const CovisMap& map,
                                         const SceneCovisScore& score);

ProximityLoss proximity_loss(const ProximityModel& model,
                             const GaussianSet& gaussians,
                             const CameraView& view, const CovisMap& map,
                             const SceneCovisScore& score);

// dL_p/dg with the covisibility weights held constant.
std::vector<Vec3> proximity_loss_grad(const ProximityModel& model,
                                      const GaussianSet& gaussians,
                                      const CameraView& view,
                                      const CovisMap& map,
                                      const SceneCovisScore& score);

double total_objective(double l1, double dssim, double lambda, double l_p);

struct Classification {
  std::vector<double> scores;
  std::vector<bool> near;
  double near_fraction = 0.0;
  // Input cloud recolored: near blue, far red.
  PointCloud colored;
};

Classification classify_cloud(const ProximityModel& model,
                              const PointCloud& cloud, double threshold = 0.5);

// --- descent demo -----------------------------------------------------------

struct DescentOptions {
  int steps = 500;
  // Per-Gaussian step length in normalized coordinates.
  double step_size = 0.01;
};

// Moves each Gaussian a fixed normalized distance against its L_p gradient,
// cycling through the views. `on_step(step, positions)` is called with the
// initial state (step 0) and after every step.
std::vector<Vec3> descend_proximity(
    const ProximityModel& model, std::vector<Vec3> positions,
    std::span<const CameraView> views, std::span<const CovisMap> maps,
    const SceneCovisScore& score, const DescentOptions& options,
    const std::function<void(int, const std::vector<Vec3>&)>& on_step = {});

}  // namespace comap
