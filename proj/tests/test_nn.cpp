#include <sstream>

#include <gtest/gtest.h>

#include "mmd/nn.hpp"

using namespace mmd;
using namespace mmd::nn;

namespace {

Layer make_layer(Matrix w, Vector b, Activation a) {
  Layer l;
  l.weight = std::move(w);
  l.bias = std::move(b);
  l.activation = a;
  return l;
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST(Init, ShapesAndZeroBiases) {
  const std::vector<std::size_t> dims{4, 3, 1};
  const DenseNet net = init_net(dims, Activation::ReLU, Activation::Identity, 17);
  ASSERT_EQ(net.layers().size(), 2u);
  EXPECT_EQ(net.layers()[0].weight.rows(), 3);
  EXPECT_EQ(net.layers()[0].weight.cols(), 4);
  EXPECT_EQ(net.layers()[1].weight.rows(), 1);
  EXPECT_EQ(net.layers()[1].weight.cols(), 3);
  for (const auto& l : net.layers()) EXPECT_TRUE(l.bias.isZero(0.0));
  EXPECT_EQ(net.num_parameters(), 3u * 4 + 3 + 3 + 1);
  EXPECT_TRUE(net == init_net(dims, Activation::ReLU, Activation::Identity, 17));
  EXPECT_FALSE(net == init_net(dims, Activation::ReLU, Activation::Identity, 18));
}

TEST(Init, SeluVarianceIsOneOverFanIn) {
  const std::vector<std::size_t> dims{32, 128};
  const DenseNet net = init_net(dims, Activation::SELU, 5);
  const Matrix& w = net.layers()[0].weight;
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  EXPECT_NEAR(var, 1.0 / 32, 0.2 / 32);
}

TEST(Net, RejectsBrokenChainsAndNonFiniteParameters) {
  std::vector<Layer> bad{make_layer(Matrix::Zero(3, 2), Vector::Zero(3), Activation::ReLU),
                         make_layer(Matrix::Zero(1, 4), Vector::Zero(1), Activation::Identity)};
  EXPECT_THROW(DenseNet{bad}, UsageError);
  Matrix w = Matrix::Zero(1, 1);
  w(0, 0) = std::nan("");
  EXPECT_THROW(DenseNet({make_layer(w, Vector::Zero(1), Activation::Identity)}), NumericalError);
}

TEST(Forward, ClosedForms) {
  const DenseNet id({make_layer(Matrix::Identity(3, 3), Vector::Zero(3), Activation::Identity)});
  const Vector x = Vector::LinSpaced(3, -1, 1);
  EXPECT_EQ(predict(id, x), x);

  const DenseNet relu({make_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::ReLU)});
  Vector v(2);
  v << -1, 2;
  const Vector y = predict(relu, v);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.0);

  EXPECT_EQ(activate(Activation::SELU, 0.0), 0.0);
  EXPECT_NEAR(activate(Activation::SELU, -50.0), -1.7580993408473766, 1e-12);
  EXPECT_NEAR(kSeluLambda * kSeluAlpha, 1.7580993408473766, 1e-15);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const std::vector<std::size_t> dims{5, 7, 2};
  const DenseNet net = init_net(dims, Activation::Tanh, Activation::Identity, 1);
  Rng rng(2);
  const auto fw = forward(net, random_vector(rng, 5));
  const auto bw = backward(net, fw.tape, Vector::Zero(2));
  EXPECT_TRUE(bw.grads.flatten().isZero(0.0));
  EXPECT_TRUE(bw.input_grad.isZero(0.0));
}

TEST(Backward, LinearInputGradIsTransposeTimesUpstream) {
  Rng rng(3);
  Matrix w(3, 4);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const DenseNet net({make_layer(w, random_vector(rng, 3), Activation::Identity)});
  const Vector up = random_vector(rng, 3);
  const auto bw = backward(net, forward(net, random_vector(rng, 4)).tape, up);
  const Vector expect = w.transpose() * up;
  EXPECT_EQ(bw.input_grad, expect);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomNets) {
  Rng rng(11);
  const Activation acts[] = {Activation::Identity, Activation::ReLU, Activation::SELU, Activation::Tanh};
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> dims{1 + rng.below(8)};
    for (std::size_t k = 0; k < depth; ++k) dims.push_back(1 + rng.below(16));
    const DenseNet net = init_net(dims, acts[rng.below(4)], acts[rng.below(4)], rng.bits());
    const Vector x = random_vector(rng, dims.front());
    const Vector up = random_vector(rng, dims.back());

    // ReLU and SELU have a kink at 0 where central differences average the two
    // slopes; skip draws that land within the step of one.
    const auto fw = forward(net, x);
    bool near_kink = false;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      if (net.layers()[l].activation == Activation::Identity || net.layers()[l].activation == Activation::Tanh) continue;
      if ((fw.tape.pre[l].array().abs() < 1e-3).any()) near_kink = true;
    }
    if (near_kink) continue;
    ++checked;

    auto objective = [&](const Vector& flat) {
      DenseNet copy = net;
      copy.assign(flat);
      return predict(copy, x).dot(up);
    };
    const auto bw = backward(net, fw.tape, up);
    const Vector numeric = finite_diff_grad(objective, net.flatten());
    const double err = (bw.grads.flatten() - numeric).norm() /
                       std::max({bw.grads.flatten().norm(), numeric.norm(), 1e-10});
    EXPECT_LT(err, 1e-4) << "trial " << trial;

    auto of_input = [&](const Vector& xi) { return predict(net, xi).dot(up); };
    const Vector ni = finite_diff_grad(of_input, x);
    EXPECT_LT((bw.input_grad - ni).norm() / std::max({ni.norm(), bw.input_grad.norm(), 1e-10}), 1e-4);
  }
  EXPECT_GE(checked, 30);
}

TEST(Backward, AccumulateAddsUp) {
  const std::vector<std::size_t> dims{3, 4, 1};
  const DenseNet net = init_net(dims, Activation::SELU, Activation::Identity, 4);
  Rng rng(5);
  const Vector a = random_vector(rng, 3), b = random_vector(rng, 3);
  const Vector up = Vector::Ones(1);
  GradientSet acc(net);
  backward_accumulate(net, forward(net, a).tape, up, acc);
  backward_accumulate(net, forward(net, b).tape, up, acc);
  GradientSet sum = backward(net, forward(net, a).tape, up).grads;
  sum += backward(net, forward(net, b).tape, up).grads;
  EXPECT_TRUE(acc.flatten().isApprox(sum.flatten(), 1e-14));
}

TEST(Optimizer, SgdStep) {
  DenseNet net({make_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Activation::Identity)});
  GradientSet g(net);
  g.layers()[0].weight(0, 0) = 2.0;
  OptimizerState st(net, Optimizer::SGD, 0.1);
  optimizer_step(net, g, st);
  EXPECT_DOUBLE_EQ(net.layers()[0].weight(0, 0), 0.8);
}

TEST(Optimizer, AdamFirstStepIsLearningRateSized) {
  for (const double grad : {1e-3, 1.0, 250.0, -7.0}) {
    DenseNet net({make_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Activation::Identity)});
    GradientSet g(net);
    g.layers()[0].weight(0, 0) = grad;
    OptimizerState st(net, Optimizer::Adam, 0.01);
    optimizer_step(net, g, st);
    // m_hat = g, v_hat = g^2, step = lr g / (|g| + eps)
    const double expect = 1.0 - 0.01 * grad / (std::abs(grad) + 1e-8);
    EXPECT_NEAR(net.layers()[0].weight(0, 0), expect, 1e-15);
  }
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  const std::vector<std::size_t> dims{3, 2};
  for (const auto algo : {Optimizer::SGD, Optimizer::Adam}) {
    DenseNet net = init_net(dims, Activation::ReLU, 1);
    const DenseNet before = net;
    OptimizerState st(net, algo, 0.5);
    optimizer_step(net, GradientSet(net), st);
    EXPECT_TRUE(net == before);
  }
}

TEST(Optimizer, RefusesNonFiniteGradients) {
  const std::vector<std::size_t> dims{3, 2};
  DenseNet net = init_net(dims, Activation::ReLU, 1);
  const DenseNet before = net;
  GradientSet g(net);
  g.layers()[0].bias[1] = std::numeric_limits<double>::infinity();
  OptimizerState st(net, Optimizer::Adam, 0.5);
  EXPECT_THROW(optimizer_step(net, g, st), NumericalError);
  EXPECT_TRUE(net == before);
}

TEST(FiniteDiff, ClosedForms) {
  Vector p(1);
  p << 3.0;
  EXPECT_NEAR(finite_diff_grad([](const Vector& v) { return v[0] * v[0]; }, p)[0], 6.0, 1e-6);
  Vector q = Vector::LinSpaced(4, -1, 2);
  EXPECT_TRUE(finite_diff_grad([](const Vector&) { return 4.2; }, q).isZero(0.0));
  const Vector g = finite_diff_grad([](const Vector& v) { return v.array().exp().sum(); }, q);
  for (Eigen::Index k = 0; k < q.size(); ++k) EXPECT_LT(relative_error(g[k], std::exp(q[k])), 1e-6);
}

TEST(Selu, SelfNormalizes) {
  // Wide layers, so per-unit spread from the random weights stays small.
  const std::vector<std::size_t> dims{128, 128, 128, 128, 128};
  const DenseNet net = init_net(dims, Activation::SELU, 9);
  Rng rng(10);
  const int n = 10000;
  Eigen::MatrixXd out(n, 128);
  for (int i = 0; i < n; ++i) out.row(i) = predict(net, random_vector(rng, 128)).transpose();
  for (Eigen::Index u = 0; u < 128; ++u) {
    const double mean = out.col(u).mean();
    const double var = (out.col(u).array() - mean).square().mean();
    EXPECT_GE(mean, -0.3);
    EXPECT_LE(mean, 0.3);
    EXPECT_GE(var, 0.5);
    EXPECT_LE(var, 2.0);
  }
}

TEST(Checkpoint, HexRoundTripIsBitExact) {
  const std::vector<std::size_t> dims{6, 5, 3};
  const DenseNet net = init_net(dims, Activation::SELU, Activation::Tanh, 21);
  std::stringstream io;
  write_net(io, net);
  EXPECT_TRUE(read_net(io) == net);
  for (const double v : {0.1, -3.5e-300, 1e308, 0.0}) EXPECT_EQ(parse_hex(format_hex(v)), v);
  std::istringstream bad("net 1\nlayer 2 1 relu\n0x1p+0\n");
  EXPECT_THROW(read_net(bad), DataError);
}
