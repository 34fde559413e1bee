#include "fpte/neural.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fpte::nn {

namespace {

void apply_activation(Activation a, MatX& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh(); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return sigmoid(v); }); break;
  }
}

void apply_activation(Activation a, VecX& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh(); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return sigmoid(v); }); break;
  }
}

// dL/dpre = dL/dpost * act'(pre), with post recomputed from pre where needed.
MatX activation_backward(Activation a, const MatX& pre, const MatX& grad_post) {
  switch (a) {
    case Activation::identity: return grad_post;
    case Activation::relu: return grad_post.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    case Activation::tanh: {
      const MatX t = pre.array().tanh();
      return grad_post.cwiseProduct((1.0 - t.array().square()).matrix());
    }
    case Activation::sigmoid: {
      const MatX s = pre.unaryExpr([](double v) { return sigmoid(v); });
      return grad_post.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
    }
  }
  return grad_post;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    double d = 0.0;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Mlp Mlp::create(const std::vector<int>& dims, Activation hidden, Activation output, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
  Rng rng(mix_seed(seed, 0x1717));
  Mlp net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    if (in < 1 || out < 1) throw ConfigError("mlp: layer dims must be positive");
    Dense layer;
    layer.activation = (l + 2 == dims.size()) ? output : hidden;
    const double limit =
        layer.activation == Activation::relu ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
    layer.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = uniform(rng, -limit, limit);
    layer.bias = VecX::Zero(out);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

int Mlp::input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
int Mlp::output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

void Mlp::validate() const {
  if (layers.empty()) throw ConfigError("mlp: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows())
      throw ConfigError("mlp: layer " + std::to_string(l) + " bias size does not match weight rows");
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
      throw ConfigError("mlp: layer " + std::to_string(l) + " input does not chain with previous output");
  }
}

VecX Mlp::forward(const VecX& x) const {
  if (x.size() != input_dim())
    throw DimensionError("mlp: input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(input_dim()));
  VecX h = x;
  for (const auto& l : layers) {
    VecX z = l.bias;
    z.noalias() += l.weight * h;
    apply_activation(l.activation, z);
    h = std::move(z);
  }
  return h;
}

MatX Mlp::forward_batch(const MatX& x) const {
  MatX out(output_dim(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = forward(x.col(c));
  return out;
}

Gradients Gradients::zeros_like(const Mlp& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weight.push_back(MatX::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(VecX::Zero(l.bias.size()));
  }
  return g;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& w : weight) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : bias) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

Tape forward_train(const Mlp& net, const MatX& x) {
  if (x.rows() != net.input_dim()) throw DimensionError("mlp: batch input rows do not match input_dim");
  Tape tape;
  MatX h = x;
  for (const auto& l : net.layers) {
    tape.inputs.push_back(h);
    MatX z = l.weight * h;
    z.colwise() += l.bias;
    tape.pre.push_back(z);
    apply_activation(l.activation, z);
    h = std::move(z);
  }
  tape.output = std::move(h);
  return tape;
}

Gradients backward(const Mlp& net, const Tape& tape, const MatX& grad, GradientAt at) {
  if (grad.rows() != net.output_dim() || grad.cols() != tape.output.cols())
    throw DimensionError("mlp: output gradient shape mismatch");
  Gradients g = Gradients::zeros_like(net);
  const int n = static_cast<int>(net.layers.size());
  MatX delta = at == GradientAt::last_preactivation
                   ? grad
                   : activation_backward(net.layers[n - 1].activation, tape.pre[n - 1], grad);
  for (int l = n - 1; l >= 0; --l) {
    g.weight[l].noalias() = delta * tape.inputs[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    MatX upstream = net.layers[l].weight.transpose() * delta;
    if (l > 0) {
      delta = activation_backward(net.layers[l - 1].activation, tape.pre[l - 1], upstream);
    } else {
      g.input = std::move(upstream);
    }
  }
  return g;
}

double bce_with_logits(const MatX& logits, const VecX& labels, MatX* grad) {
  if (logits.rows() != 1 || logits.cols() != labels.size()) throw DimensionError("bce: logits must be 1 x B");
  const double batch = static_cast<double>(labels.size());
  double loss = 0.0;
  if (grad) grad->resize(1, logits.cols());
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double z = logits(0, i);
    const double y = labels[i];
    // log(1 + e^z) - y z, evaluated stably
    loss += softplus(z) - y * z;
    if (grad) (*grad)(0, i) = (sigmoid(z) - y) / batch;
  }
  return loss / batch;
}

MixtureParams mdn_params(const VecX& head, const MdnLayout& layout) {
  if (head.size() != layout.head_size()) throw DimensionError("mdn: head size mismatch");
  const int k = layout.components;
  const int d = layout.dim;
  MixtureParams p;
  const VecX logits = head.head(k);
  const double mx = logits.maxCoeff();
  p.weights = (logits.array() - mx).exp();
  p.weights /= p.weights.sum();
  p.means = Eigen::Map<const MatX>(head.data() + k, d, k);
  p.stddevs = Eigen::Map<const MatX>(head.data() + k + k * d, d, k)
                  .unaryExpr([&](double v) { return softplus(v) + layout.sigma_floor; });
  return p;
}

double mdn_loss(const VecX& head, const VecX& target, const MdnLayout& layout, VecX* grad) {
  if (target.size() != layout.dim) throw DimensionError("mdn: target size mismatch");
  const int k = layout.components;
  const int d = layout.dim;
  const MixtureParams p = mdn_params(head, layout);
  const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
  VecX log_terms(k);
  for (int c = 0; c < k; ++c) {
    double s = std::log(p.weights[c]);
    for (int j = 0; j < d; ++j) {
      const double sigma = p.stddevs(j, c);
      const double z = (target[j] - p.means(j, c)) / sigma;
      s += -half_log_2pi - std::log(sigma) - 0.5 * z * z;
    }
    log_terms[c] = s;
  }
  const double mx = log_terms.maxCoeff();
  const double lse = mx + std::log((log_terms.array() - mx).exp().sum());
  if (grad) {
    grad->resize(head.size());
    const VecX resp = (log_terms.array() - lse).exp();
    for (int c = 0; c < k; ++c) {
      (*grad)[c] = p.weights[c] - resp[c];
      for (int j = 0; j < d; ++j) {
        const double sigma = p.stddevs(j, c);
        const double diff = target[j] - p.means(j, c);
        (*grad)[k + c * d + j] = -resp[c] * diff / (sigma * sigma);
        const double dsigma = resp[c] * (1.0 / sigma - diff * diff / (sigma * sigma * sigma));
        (*grad)[k + k * d + c * d + j] = dsigma * sigmoid(head[k + k * d + c * d + j]);
      }
    }
  }
  return -lse;
}

double mixture_nll(const MixtureParams& params, const VecX& target) {
  double density = 0.0;
  for (Eigen::Index c = 0; c < params.weights.size(); ++c) {
    double comp = params.weights[c];
    for (Eigen::Index j = 0; j < target.size(); ++j) {
      const double sigma = params.stddevs(j, c);
      const double z = (target[j] - params.means(j, c)) / sigma;
      comp *= std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
    }
    density += comp;
  }
  return -std::log(density);
}

VecX mixture_sample(const MixtureParams& params, Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  Eigen::Index comp = params.weights.size() - 1;
  double acc = 0.0;
  for (Eigen::Index c = 0; c < params.weights.size(); ++c) {
    acc += params.weights[c];
    if (u < acc) {
      comp = c;
      break;
    }
  }
  VecX x(params.means.rows());
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = params.means(j, comp) + params.stddevs(j, comp) * gaussian(rng);
  return x;
}

AdamState AdamState::create(const Mlp& net, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const auto& l : net.layers) {
    s.m_weight.push_back(MatX::Zero(l.weight.rows(), l.weight.cols()));
    s.v_weight.push_back(MatX::Zero(l.weight.rows(), l.weight.cols()));
    s.m_bias.push_back(VecX::Zero(l.bias.size()));
    s.v_bias.push_back(VecX::Zero(l.bias.size()));
  }
  return s;
}

void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
  if (grads.weight.size() != net.layers.size() || state.m_weight.size() != net.layers.size())
    throw DimensionError("adam: layer count mismatch");
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    if (g.rows() != param.rows() || g.cols() != param.cols()) throw DimensionError("adam: gradient shape mismatch");
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].weight, grads.weight[l], state.m_weight[l], state.v_weight[l]);
    update(net.layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l]);
  }
}

std::string serialize(const Mlp& net, const std::string& metadata) {
  net.validate();
  std::string out = "FPNN";
  out.push_back(static_cast<char>(kCheckpointVersion));
  put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    put_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    out.push_back(static_cast<char>(l.activation));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_f64(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_f64(out, l.bias[r]);
  }
  put_u32(out, static_cast<std::uint32_t>(metadata.size()));
  out += metadata;
  return out;
}

Mlp deserialize(const std::string& bytes, std::string* metadata) {
  Reader in(bytes);
  if (in.str(4) != "FPNN") throw IoError("checkpoint: bad magic");
  const std::uint8_t version = in.u8();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t n = in.u32();
  Mlp net;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t cols = in.u32();
    const std::uint32_t rows = in.u32();
    const std::uint8_t act = in.u8();
    if (act > static_cast<std::uint8_t>(Activation::sigmoid)) throw IoError("checkpoint: bad activation code");
    Dense l;
    l.activation = static_cast<Activation>(act);
    l.weight.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) l.weight(r, c) = in.f64();
    l.bias.resize(rows);
    for (std::uint32_t r = 0; r < rows; ++r) l.bias[r] = in.f64();
    net.layers.push_back(std::move(l));
  }
  const std::uint32_t meta_len = in.u32();
  std::string meta = in.str(meta_len);
  if (!in.done()) throw IoError("checkpoint: trailing bytes");
  if (metadata) *metadata = std::move(meta);
  try {
    net.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return net;
}

void save_checkpoint(const std::string& path, const Mlp& net, const std::string& metadata) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const std::string bytes = serialize(net, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

Mlp load_checkpoint(const std::string& path, std::string* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), metadata);
}

}  // namespace fpte::nn
