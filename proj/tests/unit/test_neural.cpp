#include <doctest.h>

#include <functional>

#include "fpte/neural.hpp"
#include "helpers.hpp"

using namespace fpte;
using namespace fpte::nn;
using fpte::test::rel_err;

namespace {

Mlp zero_like(Mlp net) {
  for (auto& l : net.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return net;
}

MatX random_matrix(Rng& rng, int r, int c) {
  MatX m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = gaussian(rng);
  return m;
}

// Central-difference check of every parameter of `net` for a scalar loss.
double max_param_rel_error(Mlp net, const std::function<double(const Mlp&)>& loss, const Gradients& g) {
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (int i = 0; i < net.layers[l].weight.size(); ++i) {
      double& w = net.layers[l].weight.data()[i];
      const double keep = w;
      w = keep + h;
      const double lp = loss(net);
      w = keep - h;
      const double lm = loss(net);
      w = keep;
      worst = std::max(worst, rel_err((lp - lm) / (2 * h), g.weight[l].data()[i], 1e-7));
    }
    for (int i = 0; i < net.layers[l].bias.size(); ++i) {
      double& b = net.layers[l].bias[i];
      const double keep = b;
      b = keep + h;
      const double lp = loss(net);
      b = keep - h;
      const double lm = loss(net);
      b = keep;
      worst = std::max(worst, rel_err((lp - lm) / (2 * h), g.bias[l][i], 1e-7));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("forward examples") {
  Mlp zero = zero_like(Mlp::create({3, 4, 2}, Activation::identity, Activation::identity, 1));
  CHECK(zero.forward(VecX::Ones(3)).isZero(0.0));

  Mlp relu;
  relu.layers.push_back({MatX::Identity(2, 2), VecX::Zero(2), Activation::relu});
  const VecX y = relu.forward((VecX(2) << -1, 2).finished());
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 2.0);

  // 2 -> 2 (tanh) -> 1 (identity) with hand-picked weights.
  Mlp two;
  two.layers.push_back({(MatX(2, 2) << 0.5, -1.0, 2.0, 0.25).finished(), (VecX(2) << 0.1, -0.2).finished(),
                        Activation::tanh});
  two.layers.push_back({(MatX(1, 2) << 1.5, -0.5).finished(), (VecX(1) << 0.3).finished(), Activation::identity});
  const VecX x = (VecX(2) << 0.4, -0.6).finished();
  const double h0 = std::tanh(0.5 * 0.4 - 1.0 * -0.6 + 0.1);
  const double h1 = std::tanh(2.0 * 0.4 + 0.25 * -0.6 - 0.2);
  CHECK(std::abs(two.forward(x)[0] - (1.5 * h0 - 0.5 * h1 + 0.3)) < 1e-12);
  CHECK_THROWS_AS(two.forward(VecX::Ones(3)), DimensionError);
}

TEST_CASE("batched forward equals per-sample forward bit for bit") {
  Rng rng(1);
  const Mlp net = Mlp::create({5, 16, 16, 3}, Activation::relu, Activation::sigmoid, 2);
  const MatX x = random_matrix(rng, 5, 37);
  const MatX y = net.forward_batch(x);
  for (int c = 0; c < 37; ++c) CHECK(y.col(c) == net.forward(x.col(c)));
  const Tape t = forward_train(net, x);
  CHECK((t.output - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("network construction invariants") {
  const Mlp net = Mlp::create({7, 5, 3}, Activation::relu, Activation::identity, 3);
  CHECK_NOTHROW(net.validate());
  CHECK(net.input_dim() == 7);
  CHECK(net.output_dim() == 3);
  CHECK(net.parameter_count() == 7 * 5 + 5 + 5 * 3 + 3);
  CHECK(net.all_finite());
  Mlp broken = net;
  broken.layers[1].weight.resize(3, 4);
  CHECK_THROWS_AS(broken.validate(), ConfigError);
  const Mlp again = Mlp::create({7, 5, 3}, Activation::relu, Activation::identity, 3);
  CHECK(again.layers[0].weight == net.layers[0].weight);
}

TEST_CASE("sigmoid cross-entropy gradient at p = 0.5 and label 1 is -0.5") {
  MatX logits = MatX::Zero(1, 1);
  MatX grad;
  const double loss = bce_with_logits(logits, VecX::Ones(1), &grad);
  CHECK(loss == doctest::Approx(std::log(2.0)));
  CHECK(grad(0, 0) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("stable sigmoid and softplus at extremes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(800.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  MatX big = MatX::Constant(1, 2, 1000.0);
  CHECK(std::isfinite(bce_with_logits(big, (VecX(2) << 0, 1).finished(), nullptr)));
}

TEST_CASE("backward matches central differences for every activation") {
  Rng rng(4);
  for (Activation hidden : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::identity}) {
    const Mlp net = Mlp::create({4, 6, 5, 2}, hidden, Activation::tanh, 10 + static_cast<int>(hidden));
    const MatX x = random_matrix(rng, 4, 8);
    const MatX r = random_matrix(rng, 2, 8);
    auto loss = [&](const Mlp& n) { return (n.forward_batch(x).array() * r.array()).sum(); };
    const Tape t = forward_train(net, x);
    const Gradients g = backward(net, t, r);
    CHECK(max_param_rel_error(net, loss, g) < 1e-4);
    // input gradient
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      MatX xp = x, xm = x;
      xp.data()[i] += h;
      xm.data()[i] -= h;
      const double num = ((net.forward_batch(xp) - net.forward_batch(xm)).array() * r.array()).sum() / (2 * h);
      worst = std::max(worst, rel_err(num, g.input.data()[i], 1e-7));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("fused sigmoid cross-entropy gradient matches central differences") {
  Rng rng(5);
  const Mlp net = Mlp::create({6, 8, 1}, Activation::relu, Activation::sigmoid, 3);
  const MatX x = random_matrix(rng, 6, 12);
  VecX y(12);
  for (int i = 0; i < 12; ++i) y[i] = i % 2;
  auto loss = [&](const Mlp& n) {
    const Tape t = forward_train(n, x);
    return bce_with_logits(t.pre.back(), y, nullptr);
  };
  const Tape t = forward_train(net, x);
  MatX dlogit;
  bce_with_logits(t.pre.back(), y, &dlogit);
  const Gradients g = backward(net, t, dlogit, GradientAt::last_preactivation);
  CHECK(max_param_rel_error(net, loss, g) < 1e-4);
}

TEST_CASE("zero weights with balanced labels are a stationary point") {
  const Mlp net = zero_like(Mlp::create({3, 4, 1}, Activation::relu, Activation::sigmoid, 1));
  Rng rng(6);
  const MatX x = random_matrix(rng, 3, 10);
  VecX y(10);
  for (int i = 0; i < 10; ++i) y[i] = i % 2;
  const Tape t = forward_train(net, x);
  MatX dlogit;
  bce_with_logits(t.pre.back(), y, &dlogit);
  const Gradients g = backward(net, t, dlogit, GradientAt::last_preactivation);
  CHECK(g.max_abs() < 1e-15);
}

TEST_CASE("adam examples") {
  Mlp net;
  net.layers.push_back({MatX::Constant(1, 1, 0.7), VecX::Constant(1, -0.2), Activation::identity});
  AdamState st = AdamState::create(net, {});
  CHECK(st.m_weight[0].rows() == 1);
  CHECK(st.v_bias[0].size() == 1);

  Gradients zero = Gradients::zeros_like(net);
  adam_step(net, zero, st);
  CHECK(net.layers[0].weight(0, 0) == 0.7);
  CHECK(net.layers[0].bias[0] == -0.2);

  Mlp fresh;
  fresh.layers.push_back({MatX::Constant(1, 1, 0.7), VecX::Constant(1, -0.2), Activation::identity});
  AdamState s2 = AdamState::create(fresh, {});
  Gradients g = Gradients::zeros_like(fresh);
  g.weight[0](0, 0) = 0.3;
  g.bias[0][0] = -2.0;
  adam_step(fresh, g, s2);
  const double lr = s2.config.lr, eps = s2.config.eps;
  CHECK(fresh.layers[0].weight(0, 0) == doctest::Approx(0.7 - lr * 0.3 / (0.3 + eps)).epsilon(1e-12));
  CHECK(fresh.layers[0].bias[0] == doctest::Approx(-0.2 + lr * 2.0 / (2.0 + eps)).epsilon(1e-12));

  Gradients wrong = Gradients::zeros_like(Mlp::create({2, 1}, Activation::identity, Activation::identity, 1));
  CHECK_THROWS_AS(adam_step(fresh, wrong, s2), DimensionError);
}

TEST_CASE("adam minimizes a one-dimensional quadratic") {
  // loss = (w - 1)^2 for a single scalar weight
  Mlp net;
  net.layers.push_back({MatX::Zero(1, 1), VecX::Zero(1), Activation::identity});
  AdamState st = AdamState::create(net, {0.02});
  auto loss = [&] { return std::pow(net.layers[0].weight(0, 0) - 1.0, 2); };
  const double start = loss();
  std::vector<double> hist;
  for (int i = 0; i < 200; ++i) {
    Gradients g = Gradients::zeros_like(net);
    g.weight[0](0, 0) = 2.0 * (net.layers[0].weight(0, 0) - 1.0);
    adam_step(net, g, st);
    hist.push_back(loss());
    CHECK(net.all_finite());
  }
  for (int i = 10; i < 40; ++i) CHECK(hist[i] <= hist[i - 1]);
  CHECK(hist.back() < 1e-3 * start);
}

TEST_CASE("small learning rate gives a non-increasing loss on a fixed batch") {
  Rng rng(7);
  Mlp net = Mlp::create({4, 16, 1}, Activation::tanh, Activation::identity, 5);
  const MatX x = random_matrix(rng, 4, 32);
  const MatX y = (x.row(0) - 0.5 * x.row(2)).array().sin().matrix();
  AdamState st = AdamState::create(net, {1e-3});
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    const Tape t = forward_train(net, x);
    const MatX diff = t.output - y;
    const double l = diff.squaredNorm() / 32.0;
    CHECK(l <= prev + 1e-12);
    prev = l;
    adam_step(net, backward(net, t, 2.0 * diff / 32.0), st);
  }
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    Rng rng(8);
    Mlp net = Mlp::create({3, 8, 1}, Activation::relu, Activation::sigmoid, 9);
    AdamState st = AdamState::create(net, {});
    for (int step = 0; step < 30; ++step) {
      const MatX x = random_matrix(rng, 3, 16);
      VecX y(16);
      for (int i = 0; i < 16; ++i) y[i] = x(0, i) > 0;
      const Tape t = forward_train(net, x);
      MatX d;
      bce_with_logits(t.pre.back(), y, &d);
      adam_step(net, backward(net, t, d, GradientAt::last_preactivation), st);
    }
    return serialize(net);
  };
  CHECK(run() == run());
}

TEST_CASE("mixture NLL examples") {
  const int d = 5;
  MixtureParams one{VecX::Ones(1), MatX::Zero(d, 1), MatX::Ones(d, 1)};
  CHECK(std::abs(mixture_nll(one, VecX::Zero(d)) - 0.5 * d * std::log(2 * M_PI)) < 1e-12);

  Rng rng(9);
  MixtureParams single{VecX::Ones(1), random_matrix(rng, d, 1), (random_matrix(rng, d, 1).array().abs() + 0.1).matrix()};
  MixtureParams twin{VecX::Constant(2, 0.5), MatX(d, 2), MatX(d, 2)};
  twin.means << single.means, single.means;
  twin.stddevs << single.stddevs, single.stddevs;
  const VecX t = random_matrix(rng, d, 1);
  CHECK(std::abs(mixture_nll(single, t) - mixture_nll(twin, t)) < 1e-12);
}

TEST_CASE("mdn head parameters and loss agree with a direct density evaluation") {
  Rng rng(10);
  const MdnLayout layout{3, 4, 1e-3};
  for (int trial = 0; trial < 50; ++trial) {
    const VecX head = random_matrix(rng, layout.head_size(), 1);
    const VecX target = random_matrix(rng, layout.dim, 1) * 0.5;
    const MixtureParams p = mdn_params(head, layout);
    CHECK(std::abs(p.weights.sum() - 1.0) < 1e-12);
    CHECK(p.stddevs.minCoeff() >= layout.sigma_floor);
    double density = 0.0;
    for (int k = 0; k < layout.components; ++k) {
      double prod = p.weights[k];
      for (int j = 0; j < layout.dim; ++j) {
        const double s = p.stddevs(j, k), z = (target[j] - p.means(j, k)) / s;
        prod *= std::exp(-0.5 * z * z) / (s * std::sqrt(2 * M_PI));
      }
      density += prod;
    }
    CHECK(std::abs(mixture_nll(p, target) + std::log(density)) < 1e-10);
    CHECK(std::abs(mdn_loss(head, target, layout) + std::log(density)) < 1e-10);
  }
}

TEST_CASE("single-component head at the mean with unit scale") {
  const MdnLayout layout{1, 3, 1e-3};
  VecX head(layout.head_size());
  head[0] = 0.0;
  head.segment(1, 3) = (VecX(3) << 0.2, -0.1, 0.4).finished();
  head.segment(4, 3).setConstant(std::log(std::expm1(1.0 - layout.sigma_floor)));
  CHECK(std::abs(mdn_loss(head, head.segment(1, 3), layout) - 1.5 * std::log(2 * M_PI)) < 1e-12);
}

TEST_CASE("mdn loss gradient matches central differences") {
  Rng rng(11);
  const MdnLayout layout{4, 3, 1e-3};
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const VecX head = random_matrix(rng, layout.head_size(), 1);
    const VecX target = random_matrix(rng, layout.dim, 1);
    VecX grad;
    mdn_loss(head, target, layout, &grad);
    double worst = 0.0;
    for (int i = 0; i < head.size(); ++i) {
      VecX hp = head, hm = head;
      hp[i] += h;
      hm[i] -= h;
      const double num = (mdn_loss(hp, target, layout) - mdn_loss(hm, target, layout)) / (2 * h);
      // Entries below 1e-4 sit under the finite-difference noise of an O(10) loss.
      worst = std::max(worst, rel_err(num, grad[i], 1e-4));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("mixture sampling is deterministic and follows the components") {
  MixtureParams p{(VecX(2) << 0.25, 0.75).finished(), MatX(1, 2), MatX::Constant(1, 2, 0.01)};
  p.means << -1.0, 1.0;
  Rng a(3), b(3);
  int right = 0;
  for (int i = 0; i < 4000; ++i) {
    const VecX s = mixture_sample(p, a);
    CHECK(s == mixture_sample(p, b));
    right += s[0] > 0;
  }
  CHECK(right / 4000.0 == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("checkpoints round trip bit-exactly") {
  const Mlp net = Mlp::create({5, 7, 2}, Activation::relu, Activation::sigmoid, 4);
  std::string meta;
  const std::string bytes = serialize(net, "{\"kind\":\"test\"}");
  const Mlp back = deserialize(bytes, &meta);
  CHECK(meta == "{\"kind\":\"test\"}");
  CHECK(serialize(back, meta) == bytes);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.layers[l].weight == net.layers[l].weight);
    CHECK(back.layers[l].bias == net.layers[l].bias);
    CHECK(back.layers[l].activation == net.layers[l].activation);
  }
  CHECK(bytes.substr(0, 4) == "FPNN");
  CHECK(static_cast<std::uint8_t>(bytes[4]) == kCheckpointVersion);
  CHECK_THROWS_AS(deserialize(bytes + "x"), IoError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(deserialize("XXXX" + bytes.substr(4)), IoError);

  const std::string path = "test_neural_ckpt.fpnn";
  save_checkpoint(path, net, "m");
  CHECK(serialize(load_checkpoint(path)) == serialize(net));
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does/not/exist.fpnn"), MissingArtifactError);
}
