#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpte/common.hpp"

namespace fpte::nn {

enum class Activation : std::uint8_t { identity = 0, relu = 1, tanh = 2, sigmoid = 3 };

struct Dense {
  MatX weight;  // out x in
  VecX bias;    // out
  Activation activation = Activation::identity;
};

/// Plain feed-forward network. Samples are columns in every batched API.
class Mlp {
 public:
  std::vector<Dense> layers;

  /// dims = {in, hidden..., out}; Glorot-uniform weights (He for relu), zero bias.
  static Mlp create(const std::vector<int>& dims, Activation hidden, Activation output, std::uint64_t seed);

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Throws ConfigError when consecutive layer dimensions do not chain.
  void validate() const;

  /// Single-sample inference. Throws DimensionError on a size mismatch.
  VecX forward(const VecX& x) const;

  /// Evaluates each column exactly as forward() would, so batched and
  /// single inference agree bit for bit.
  MatX forward_batch(const MatX& x) const;
};

/// Intermediate values of a batched training forward pass.
struct Tape {
  std::vector<MatX> inputs;  // input to layer l
  std::vector<MatX> pre;     // pre-activation of layer l
  MatX output;
};

struct Gradients {
  std::vector<MatX> weight;
  std::vector<VecX> bias;
  MatX input;  // dL/dx

  static Gradients zeros_like(const Mlp& net);
  double max_abs() const;
};

/// Batched forward pass (matrix-matrix products) that records the tape.
Tape forward_train(const Mlp& net, const MatX& x);

enum class GradientAt { output, last_preactivation };

/// Reverse-mode pass. `grad` is dL/d(output) or, with
/// GradientAt::last_preactivation, dL/d(pre-activation of the last layer)
/// (the fused sigmoid + cross-entropy case).
Gradients backward(const Mlp& net, const Tape& tape, const MatX& grad, GradientAt at = GradientAt::output);

double sigmoid(double z);
double softplus(double z);

/// Mean binary cross-entropy over a batch, from logits (1 x B). Writes
/// dL/dlogit into grad when non-null.
double bce_with_logits(const MatX& logits, const VecX& labels, MatX* grad);

/// Diagonal Gaussian mixture head: [K mixing logits | K*d means | K*d raw scales].
struct MdnLayout {
  int components = 8;
  int dim = 39;
  double sigma_floor = 1e-3;

  int head_size() const { return components * (1 + 2 * dim); }
};

struct MixtureParams {
  VecX weights;  // K, sums to 1
  MatX means;    // d x K
  MatX stddevs;  // d x K
};

/// softmax weights, identity means, softplus + floor scales.
MixtureParams mdn_params(const VecX& head, const MdnLayout& layout);

/// Negative log-likelihood of target under the head's mixture. When grad is
/// non-null it receives dNLL/dhead.
double mdn_loss(const VecX& head, const VecX& target, const MdnLayout& layout, VecX* grad = nullptr);

/// Direct evaluation of -log sum_k w_k N(target; mu_k, diag sigma_k^2).
double mixture_nll(const MixtureParams& params, const VecX& target);

VecX mixture_sample(const MixtureParams& params, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<MatX> m_weight, v_weight;
  std::vector<VecX> m_bias, v_bias;

  static AdamState create(const Mlp& net, const AdamConfig& config);
};

/// Bias-corrected Adam update in place. Throws DimensionError if shapes differ.
void adam_step(Mlp& net, const Gradients& grads, AdamState& state);

/// Binary checkpoint: "FPNN", version byte, layer count, then per layer
/// (in, out, activation, row-major weights, bias), then a metadata string.
/// Little-endian throughout.
std::string serialize(const Mlp& net, const std::string& metadata = {});
Mlp deserialize(const std::string& bytes, std::string* metadata = nullptr);

void save_checkpoint(const std::string& path, const Mlp& net, const std::string& metadata = {});
Mlp load_checkpoint(const std::string& path, std::string* metadata = nullptr);

inline constexpr std::uint8_t kCheckpointVersion = 1;

}  // namespace fpte::nn
