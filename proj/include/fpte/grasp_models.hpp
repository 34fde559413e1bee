#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fpte/bps.hpp"
#include "fpte/neural.hpp"
#include "fpte/robot_model.hpp"

namespace fpte {

/// Hand pose in the object frame plus the open (pre-grasp) and closed
/// (in-grasp) hand configurations.
struct Grasp {
  Pose pose;
  VecX theta_p;
  VecX theta_g;

  Json to_json() const;
  static Grasp from_json(const Json& j, const std::string& context);
};

/// Grasp vector layout: translation(3), quaternion wxyz(4, w >= 0), theta_p(n), theta_g(n).
int grasp_vector_size(int hand_dof);
VecX vectorize(const Grasp& grasp);
/// Normalizes the quaternion; configurations are copied verbatim.
Grasp devectorize(const VecX& v, int hand_dof);

/// Translations enter the networks in decimeters so all grasp features are O(1).
inline constexpr double kTranslationScale = 10.0;

/// Network-side grasp features: translation relative to the encoding
/// centroid (scaled), then the rest of the grasp vector.
VecX grasp_features(const Grasp& grasp, const Vec3& centroid);
Grasp grasp_from_features(const VecX& features, const Vec3& centroid, int hand_dof);

/// Encoding values divided by the basis radius.
VecX encoding_features(const bps::BpsEncoding& encoding, const bps::BasisSet& basis);

struct GraspSample {
  Grasp grasp;
  std::shared_ptr<const bps::BpsEncoding> encoding;
  bool success = false;
  std::uint64_t scene_seed = 0;
};

struct HandLimits {
  VecX lower;
  VecX upper;

  static HandLimits of(const RobotModel& model) { return {model.hand_lower(), model.hand_upper()}; }
  int dof() const { return static_cast<int>(lower.size()); }
};

struct CurvePoint {
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // evaluator only
};

// ---------------------------------------------------------------- evaluator

class Evaluator {
 public:
  nn::Mlp net;
  bps::BasisSet basis;
  int hand_dof = 16;

  static Evaluator create(const bps::BasisSet& basis, int hand_dof, const std::vector<int>& hidden,
                          std::uint64_t seed);

  VecX features(const bps::BpsEncoding& encoding, const Grasp& grasp) const;

  /// Success probability in (0, 1).
  double evaluate(const bps::BpsEncoding& encoding, const Grasp& grasp) const;

  /// Same values as calling evaluate on each grasp, bit for bit.
  std::vector<double> evaluate_batch(const bps::BpsEncoding& encoding, const std::vector<Grasp>& grasps) const;

  void save(const std::string& path, const Json& extra = Json::object()) const;
  static Evaluator load(const std::string& path);
};

struct HardNegativeConfig {
  double max_translation = 0.05;  // per axis, meters
  double max_rotation = 60.0 * M_PI / 180.0;  // per axis, radians
  double min_translation_norm = 0.015;
  double min_rotation = 15.0 * M_PI / 180.0;
};

/// Translation offset (object frame) and intrinsic XYZ Euler rotation
/// applied in the hand frame.
struct Perturbation {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
};

/// Draws until the perturbation clears the floor: rejected iff the
/// translation norm is below the floor and every rotation angle is too.
Perturbation draw_perturbation(Rng& rng, const HardNegativeConfig& cfg = {});
Grasp apply_perturbation(const Grasp& grasp, const Perturbation& p);
Grasp make_hard_negative(const Grasp& positive, std::uint64_t seed, const HardNegativeConfig& cfg = {});

struct EvaluatorTrainConfig {
  std::vector<int> hidden = {256, 256};
  int steps = 2000;
  int batch_size = 96;
  double lr = 1e-3;
  double positive_fraction = 1.0 / 3.0;
  double negative_fraction = 1.0 / 3.0;  // remainder are hard negatives
  int log_every = 50;
  std::uint64_t seed = 1;
  HardNegativeConfig hard_negatives;

  Json to_json() const;
  static EvaluatorTrainConfig from_json(const Json& j);
};

/// Minibatches mix positives, real negatives and freshly drawn hard
/// negatives. Throws ConfigError if the samples hold a single class.
Evaluator train_evaluator(const std::vector<GraspSample>& samples, const bps::BasisSet& basis, int hand_dof,
                          const EvaluatorTrainConfig& cfg, std::vector<CurvePoint>* curve = nullptr);

/// Permutes the labels across samples (chance-level control).
std::vector<GraspSample> shuffle_labels(std::vector<GraspSample> samples, std::uint64_t seed);

// ---------------------------------------------------------------- generator

class Generator {
 public:
  nn::Mlp net;
  bps::BasisSet basis;
  nn::MdnLayout layout;
  HandLimits limits;
  double noise_scale = 0.002;

  static Generator create(const bps::BasisSet& basis, const HandLimits& limits, const std::vector<int>& hidden,
                          int components, std::uint64_t seed);

  nn::MixtureParams mixture(const bps::BpsEncoding& encoding) const;

  /// K independent samples in the object frame; unit quaternions, clamped
  /// configurations. Throws ConfigError for K < 1.
  std::vector<Grasp> generate(const bps::BpsEncoding& encoding, int k, std::uint64_t seed) const;

  void save(const std::string& path, const Json& extra = Json::object()) const;
  static Generator load(const std::string& path);
};

/// Positive grasps of one scene with the cloud they were observed from.
struct SceneGrasps {
  std::uint64_t scene_seed = 0;
  PointCloud cloud;
  std::vector<Grasp> grasps;
};

struct GeneratorTrainConfig {
  std::vector<int> hidden = {256, 256};
  int components = 8;
  int epochs = 40;
  int batch_size = 64;
  double lr = 1e-3;
  double noise_scale = 0.002;  // per-point Gaussian stddev, meters
  std::uint64_t seed = 1;

  Json to_json() const;
  static GeneratorTrainConfig from_json(const Json& j);
};

/// Minimizes the mixture NLL. Each epoch re-encodes every cloud after
/// perturbing its points with noise_scale; noise_scale == 0 encodes the
/// clean clouds. Throws ConfigError when there are no grasps.
Generator train_generator(const std::vector<SceneGrasps>& data, const bps::BasisSet& basis, const HandLimits& limits,
                          const GeneratorTrainConfig& cfg, std::vector<CurvePoint>* curve = nullptr);

/// Mean NLL of the grasps under the generator, encoding the clean clouds.
double generator_nll(const Generator& gen, const std::vector<SceneGrasps>& data);

/// Per-point Gaussian jitter.
PointCloud perturb_cloud(const PointCloud& cloud, double stddev, std::uint64_t seed);

}  // namespace fpte
