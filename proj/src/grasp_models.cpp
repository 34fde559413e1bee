#include "fpte/grasp_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpte {

Json Grasp::to_json() const {
  return Json{{"pose", pose_to_json(pose)}, {"theta_p", vecx_to_json(theta_p)}, {"theta_g", vecx_to_json(theta_g)}};
}

Grasp Grasp::from_json(const Json& j, const std::string& context) {
  Grasp g;
  g.pose = pose_from_json(require(j, "pose", context));
  g.theta_p = vecx_from_json(require(j, "theta_p", context), context + ".theta_p");
  g.theta_g = vecx_from_json(require(j, "theta_g", context), context + ".theta_g");
  if (g.theta_p.size() != g.theta_g.size()) throw ConfigError(context + ": theta_p and theta_g sizes differ");
  return g;
}

int grasp_vector_size(int hand_dof) { return 7 + 2 * hand_dof; }

VecX vectorize(const Grasp& grasp) {
  const int n = static_cast<int>(grasp.theta_p.size());
  if (grasp.theta_g.size() != n) throw DimensionError("grasp: theta_p and theta_g sizes differ");
  VecX v(grasp_vector_size(n));
  Quat q = grasp.pose.rotation();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  v.head<3>() = grasp.pose.translation();
  v[3] = q.w();
  v[4] = q.x();
  v[5] = q.y();
  v[6] = q.z();
  v.segment(7, n) = grasp.theta_p;
  v.segment(7 + n, n) = grasp.theta_g;
  return v;
}

Grasp devectorize(const VecX& v, int hand_dof) {
  if (v.size() != grasp_vector_size(hand_dof)) throw DimensionError("grasp: vector size does not match hand dof");
  Quat q(v[3], v[4], v[5], v[6]);
  if (!(q.norm() > 0.0)) q = Quat::Identity();
  Grasp g;
  g.pose = Pose(q, Vec3(v[0], v[1], v[2]));
  g.theta_p = v.segment(7, hand_dof);
  g.theta_g = v.segment(7 + hand_dof, hand_dof);
  return g;
}

VecX grasp_features(const Grasp& grasp, const Vec3& centroid) {
  VecX v = vectorize(grasp);
  v.head<3>() = (v.head<3>() - centroid) * kTranslationScale;
  return v;
}

Grasp grasp_from_features(const VecX& features, const Vec3& centroid, int hand_dof) {
  VecX v = features;
  v.head<3>() = v.head<3>() / kTranslationScale + centroid;
  return devectorize(v, hand_dof);
}

VecX encoding_features(const bps::BpsEncoding& encoding, const bps::BasisSet& basis) {
  if (encoding.values.size() != basis.size) throw DimensionError("encoding size does not match basis size");
  return encoding.values / basis.radius;
}

namespace {

Json basis_json(const bps::BasisSet& b) { return Json{{"size", b.size}, {"radius", b.radius}, {"seed", b.seed}}; }

bps::BasisSet basis_from_json(const Json& j) {
  return bps::make_basis(require_as<int>(j, "size", "basis"), require_as<double>(j, "radius", "basis"),
                         require_as<std::uint64_t>(j, "seed", "basis"));
}

Json parse_metadata(const std::string& text, const std::string& path) {
  try {
    return Json::parse(text);
  } catch (const Json::exception&) {
    throw IoError(path + ": checkpoint metadata is not valid JSON");
  }
}

}  // namespace

// ---------------------------------------------------------------- evaluator

Evaluator Evaluator::create(const bps::BasisSet& basis, int hand_dof, const std::vector<int>& hidden,
                            std::uint64_t seed) {
  Evaluator ev;
  ev.basis = basis;
  ev.hand_dof = hand_dof;
  std::vector<int> dims = {basis.size + grasp_vector_size(hand_dof)};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  ev.net = nn::Mlp::create(dims, nn::Activation::relu, nn::Activation::sigmoid, seed);
  return ev;
}

VecX Evaluator::features(const bps::BpsEncoding& encoding, const Grasp& grasp) const {
  if (grasp.theta_p.size() != hand_dof) throw DimensionError("evaluator: grasp hand dof mismatch");
  VecX x(basis.size + grasp_vector_size(hand_dof));
  x.head(basis.size) = encoding_features(encoding, basis);
  x.tail(grasp_vector_size(hand_dof)) = grasp_features(grasp, encoding.centroid);
  return x;
}

double Evaluator::evaluate(const bps::BpsEncoding& encoding, const Grasp& grasp) const {
  return net.forward(features(encoding, grasp))[0];
}

std::vector<double> Evaluator::evaluate_batch(const bps::BpsEncoding& encoding,
                                              const std::vector<Grasp>& grasps) const {
  std::vector<double> out(grasps.size());
  for (std::size_t i = 0; i < grasps.size(); ++i) out[i] = evaluate(encoding, grasps[i]);
  return out;
}

void Evaluator::save(const std::string& path, const Json& extra) const {
  Json meta = {{"kind", "evaluator"}, {"basis", basis_json(basis)}, {"hand_dof", hand_dof}, {"extra", extra}};
  nn::save_checkpoint(path, net, meta.dump());
}

Evaluator Evaluator::load(const std::string& path) {
  std::string text;
  Evaluator ev;
  ev.net = nn::load_checkpoint(path, &text);
  const Json meta = parse_metadata(text, path);
  if (meta.value("kind", "") != "evaluator") throw IoError(path + ": not an evaluator checkpoint");
  ev.basis = basis_from_json(meta.at("basis"));
  ev.hand_dof = meta.at("hand_dof").get<int>();
  if (ev.net.input_dim() != ev.basis.size + grasp_vector_size(ev.hand_dof) || ev.net.output_dim() != 1)
    throw IoError(path + ": evaluator dimensions do not match its metadata");
  return ev;
}

Perturbation draw_perturbation(Rng& rng, const HardNegativeConfig& cfg) {
  for (;;) {
    Perturbation p;
    for (int a = 0; a < 3; ++a) p.translation[a] = uniform(rng, -cfg.max_translation, cfg.max_translation);
    for (int a = 0; a < 3; ++a) p.rotation[a] = uniform(rng, -cfg.max_rotation, cfg.max_rotation);
    const bool small_translation = p.translation.norm() < cfg.min_translation_norm;
    const bool small_rotation = p.rotation.cwiseAbs().maxCoeff() < cfg.min_rotation;
    if (!(small_translation && small_rotation)) return p;
  }
}

Grasp apply_perturbation(const Grasp& grasp, const Perturbation& p) {
  Grasp out = grasp;
  out.pose = Pose(Mat3(grasp.pose.rotation_matrix() * rotation_from_euler_xyz(p.rotation)),
                  grasp.pose.translation() + p.translation);
  return out;
}

Grasp make_hard_negative(const Grasp& positive, std::uint64_t seed, const HardNegativeConfig& cfg) {
  Rng rng(mix_seed(seed, 0x4e6));
  return apply_perturbation(positive, draw_perturbation(rng, cfg));
}

Json EvaluatorTrainConfig::to_json() const {
  return Json{{"hidden", hidden},
              {"steps", steps},
              {"batch_size", batch_size},
              {"lr", lr},
              {"positive_fraction", positive_fraction},
              {"negative_fraction", negative_fraction},
              {"log_every", log_every},
              {"seed", seed},
              {"hard_negative_max_translation", hard_negatives.max_translation},
              {"hard_negative_max_rotation_deg", hard_negatives.max_rotation * 180.0 / M_PI}};
}

EvaluatorTrainConfig EvaluatorTrainConfig::from_json(const Json& j) {
  const std::string ctx = "train_evaluator";
  EvaluatorTrainConfig c;
  c.hidden = value_or(j, "hidden", c.hidden, ctx);
  c.steps = value_or(j, "steps", c.steps, ctx);
  c.batch_size = value_or(j, "batch_size", c.batch_size, ctx);
  c.lr = value_or(j, "lr", c.lr, ctx);
  c.positive_fraction = value_or(j, "positive_fraction", c.positive_fraction, ctx);
  c.negative_fraction = value_or(j, "negative_fraction", c.negative_fraction, ctx);
  c.log_every = value_or(j, "log_every", c.log_every, ctx);
  c.seed = value_or(j, "seed", c.seed, ctx);
  c.hard_negatives.max_translation = value_or(j, "hard_negative_max_translation", c.hard_negatives.max_translation, ctx);
  c.hard_negatives.max_rotation =
      value_or(j, "hard_negative_max_rotation_deg", c.hard_negatives.max_rotation * 180.0 / M_PI, ctx) * M_PI / 180.0;
  if (c.steps < 1 || c.batch_size < 3) throw ConfigError(ctx + ": steps >= 1 and batch_size >= 3 required");
  if (c.positive_fraction < 0 || c.negative_fraction < 0 || c.positive_fraction + c.negative_fraction > 1.0)
    throw ConfigError(ctx + ": minibatch fractions must be non-negative and sum to at most 1");
  return c;
}

Evaluator train_evaluator(const std::vector<GraspSample>& samples, const bps::BasisSet& basis, int hand_dof,
                          const EvaluatorTrainConfig& cfg, std::vector<CurvePoint>* curve) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].encoding) throw ConfigError("train_evaluator: sample without encoding");
    (samples[i].success ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) throw ConfigError("train_evaluator: dataset must contain both labels");

  Evaluator ev = Evaluator::create(basis, hand_dof, cfg.hidden, mix_seed(cfg.seed, 1));
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  nn::AdamState adam = nn::AdamState::create(ev.net, adam_cfg);
  Rng rng(mix_seed(cfg.seed, 2));

  const int n_pos = static_cast<int>(std::lround(cfg.batch_size * cfg.positive_fraction));
  const int n_neg = static_cast<int>(std::lround(cfg.batch_size * cfg.negative_fraction));
  const int n_hard = cfg.batch_size - n_pos - n_neg;
  const int rows = ev.net.input_dim();
  auto pick = [&](const std::vector<std::size_t>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };

  MatX x(rows, cfg.batch_size);
  VecX y(cfg.batch_size);
  for (int step = 1; step <= cfg.steps; ++step) {
    int col = 0;
    for (int i = 0; i < n_pos; ++i, ++col) {
      const auto& s = samples[pick(pos)];
      x.col(col) = ev.features(*s.encoding, s.grasp);
      y[col] = 1.0;
    }
    for (int i = 0; i < n_neg; ++i, ++col) {
      const auto& s = samples[pick(neg)];
      x.col(col) = ev.features(*s.encoding, s.grasp);
      y[col] = 0.0;
    }
    for (int i = 0; i < n_hard; ++i, ++col) {
      const auto& s = samples[pick(pos)];
      x.col(col) = ev.features(*s.encoding, apply_perturbation(s.grasp, draw_perturbation(rng, cfg.hard_negatives)));
      y[col] = 0.0;
    }
    const nn::Tape tape = nn::forward_train(ev.net, x);
    MatX grad;
    const double loss = nn::bce_with_logits(tape.pre.back(), y, &grad);
    adam_step(ev.net, nn::backward(ev.net, tape, grad, nn::GradientAt::last_preactivation), adam);
    if (!ev.net.all_finite()) throw Error("train_evaluator: parameters became non-finite at step " + std::to_string(step));
    if (curve && (step % std::max(1, cfg.log_every) == 0 || step == 1 || step == cfg.steps)) {
      int correct = 0;
      for (int c = 0; c < cfg.batch_size; ++c) correct += ((tape.output(0, c) >= 0.5) == (y[c] > 0.5));
      curve->push_back({step, loss, static_cast<double>(correct) / cfg.batch_size});
    }
  }
  return ev;
}

std::vector<GraspSample> shuffle_labels(std::vector<GraspSample> samples, std::uint64_t seed) {
  std::vector<bool> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.success);
  Rng rng(mix_seed(seed, 0x5f1));
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].success = labels[i];
  return samples;
}

// ---------------------------------------------------------------- generator

Generator Generator::create(const bps::BasisSet& basis, const HandLimits& limits, const std::vector<int>& hidden,
                            int components, std::uint64_t seed) {
  if (components < 1) throw ConfigError("generator: components must be >= 1");
  if (limits.lower.size() != limits.upper.size()) throw ConfigError("generator: hand limit sizes differ");
  Generator gen;
  gen.basis = basis;
  gen.limits = limits;
  gen.layout.components = components;
  gen.layout.dim = grasp_vector_size(limits.dof());
  std::vector<int> dims = {basis.size};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(gen.layout.head_size());
  gen.net = nn::Mlp::create(dims, nn::Activation::relu, nn::Activation::identity, seed);
  return gen;
}

nn::MixtureParams Generator::mixture(const bps::BpsEncoding& encoding) const {
  return nn::mdn_params(net.forward(encoding_features(encoding, basis)), layout);
}

std::vector<Grasp> Generator::generate(const bps::BpsEncoding& encoding, int k, std::uint64_t seed) const {
  if (k < 1) throw ConfigError("generate: K must be >= 1");
  const nn::MixtureParams params = mixture(encoding);
  Rng rng(mix_seed(seed, 0x6e7));
  std::vector<Grasp> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Grasp g = grasp_from_features(nn::mixture_sample(params, rng), encoding.centroid, limits.dof());
    g.theta_p = g.theta_p.cwiseMax(limits.lower).cwiseMin(limits.upper);
    g.theta_g = g.theta_g.cwiseMax(limits.lower).cwiseMin(limits.upper);
    out.push_back(std::move(g));
  }
  return out;
}

void Generator::save(const std::string& path, const Json& extra) const {
  Json meta = {{"kind", "generator"},
               {"basis", basis_json(basis)},
               {"components", layout.components},
               {"sigma_floor", layout.sigma_floor},
               {"hand_lower", vecx_to_json(limits.lower)},
               {"hand_upper", vecx_to_json(limits.upper)},
               {"noise_scale", noise_scale},
               {"extra", extra}};
  nn::save_checkpoint(path, net, meta.dump());
}

Generator Generator::load(const std::string& path) {
  std::string text;
  Generator gen;
  gen.net = nn::load_checkpoint(path, &text);
  const Json meta = parse_metadata(text, path);
  if (meta.value("kind", "") != "generator") throw IoError(path + ": not a generator checkpoint");
  gen.basis = basis_from_json(meta.at("basis"));
  gen.limits.lower = vecx_from_json(meta.at("hand_lower"), "generator.hand_lower");
  gen.limits.upper = vecx_from_json(meta.at("hand_upper"), "generator.hand_upper");
  gen.layout.components = meta.at("components").get<int>();
  gen.layout.sigma_floor = meta.at("sigma_floor").get<double>();
  gen.layout.dim = grasp_vector_size(gen.limits.dof());
  gen.noise_scale = meta.at("noise_scale").get<double>();
  if (gen.net.input_dim() != gen.basis.size || gen.net.output_dim() != gen.layout.head_size())
    throw IoError(path + ": generator dimensions do not match its metadata");
  return gen;
}

Json GeneratorTrainConfig::to_json() const {
  return Json{{"hidden", hidden}, {"components", components}, {"epochs", epochs},          {"batch_size", batch_size},
              {"lr", lr},         {"noise_scale", noise_scale}, {"seed", seed}};
}

GeneratorTrainConfig GeneratorTrainConfig::from_json(const Json& j) {
  const std::string ctx = "train_generator";
  GeneratorTrainConfig c;
  c.hidden = value_or(j, "hidden", c.hidden, ctx);
  c.components = value_or(j, "components", c.components, ctx);
  c.epochs = value_or(j, "epochs", c.epochs, ctx);
  c.batch_size = value_or(j, "batch_size", c.batch_size, ctx);
  c.lr = value_or(j, "lr", c.lr, ctx);
  c.noise_scale = value_or(j, "noise_scale", c.noise_scale, ctx);
  c.seed = value_or(j, "seed", c.seed, ctx);
  if (c.epochs < 1 || c.batch_size < 1 || c.components < 1)
    throw ConfigError(ctx + ": epochs, batch_size and components must be >= 1");
  if (c.noise_scale < 0.0) throw ConfigError(ctx + ".noise_scale: must be >= 0");
  return c;
}

PointCloud perturb_cloud(const PointCloud& cloud, double stddev, std::uint64_t seed) {
  PointCloud out = cloud;
  if (stddev == 0.0) return out;
  Rng rng(mix_seed(seed, 0x90e));
  for (auto& p : out.points)
    for (int a = 0; a < 3; ++a) p[a] += gaussian(rng, stddev);
  return out;
}

Generator train_generator(const std::vector<SceneGrasps>& data, const bps::BasisSet& basis, const HandLimits& limits,
                          const GeneratorTrainConfig& cfg, std::vector<CurvePoint>* curve) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t g = 0; g < data[s].grasps.size(); ++g) pairs.emplace_back(s, g);
  if (pairs.empty()) throw ConfigError("train_generator: no positive grasps");

  Generator gen = Generator::create(basis, limits, cfg.hidden, cfg.components, mix_seed(cfg.seed, 1));
  gen.noise_scale = cfg.noise_scale;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  nn::AdamState adam = nn::AdamState::create(gen.net, adam_cfg);

  std::vector<bps::BpsEncoding> encodings(data.size());
  auto encode_all = [&](int epoch) {
    parallel_for(data.size(), [&](std::size_t s) {
      const PointCloud cloud =
          perturb_cloud(data[s].cloud, cfg.noise_scale, mix_seed(cfg.seed, mix_seed(data[s].scene_seed, epoch)));
      encodings[s] = bps::encode_centered(basis, cloud);
    });
  };
  if (cfg.noise_scale == 0.0) encode_all(0);

  const int head = gen.layout.head_size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.noise_scale > 0.0) encode_all(epoch);
    Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int b = static_cast<int>(end - start);
      MatX x(basis.size, b);
      for (int c = 0; c < b; ++c) x.col(c) = encoding_features(encodings[pairs[start + c].first], basis);
      const nn::Tape tape = nn::forward_train(gen.net, x);
      MatX grad(head, b);
      for (int c = 0; c < b; ++c) {
        const auto [s, g] = pairs[start + c];
        const VecX target = grasp_features(data[s].grasps[g], encodings[s].centroid);
        VecX gcol;
        epoch_loss += nn::mdn_loss(tape.output.col(c), target, gen.layout, &gcol);
        grad.col(c) = gcol / b;
      }
      adam_step(gen.net, nn::backward(gen.net, tape, grad), adam);
    }
    if (!gen.net.all_finite()) throw Error("train_generator: parameters became non-finite in epoch " + std::to_string(epoch));
    if (curve) curve->push_back({epoch + 1, epoch_loss / static_cast<double>(pairs.size()), 0.0});
  }
  return gen;
}

double generator_nll(const Generator& gen, const std::vector<SceneGrasps>& data) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& scene : data) {
    const bps::BpsEncoding enc = bps::encode_centered(gen.basis, scene.cloud);
    const VecX head = gen.net.forward(encoding_features(enc, gen.basis));
    for (const auto& g : scene.grasps) {
      total += nn::mdn_loss(head, grasp_features(g, enc.centroid), gen.layout);
      ++count;
    }
  }
  if (count == 0) throw ConfigError("generator_nll: no grasps");
  return total / static_cast<double>(count);
}

}  // namespace fpte
