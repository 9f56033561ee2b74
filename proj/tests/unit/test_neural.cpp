#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "ragc/neural.hpp"

using namespace ragc;
using namespace ragc::nn;

namespace {

using Td = Tensor<double>;

Td random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Td t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

double dot(const Td& a, const Td& b) { return a.data().dot(b.data()); }

double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

// Central differences of `loss` with respect to every trainable parameter,
// compared against the stored analytic gradients.
double max_param_error(const std::vector<Parameter<double>*>& params, const std::function<double()>& loss) {
  constexpr double h = 1e-4;
  double worst = 0.0;
  for (Parameter<double>* p : params) {
    if (!p->trainable) continue;
    for (Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss();
      p->value[i] = keep - h;
      const double down = loss();
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, rel_error(p->grad[i], numeric));
    }
  }
  return worst;
}

double max_input_error(Td& x, const Td& analytic, const std::function<double()>& loss) {
  constexpr double h = 1e-4;
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

// Checks one sequential block: parameters and the input gradient.
void check_sequential(Sequential<double>& net, Td x, Mode mode = Mode::train) {
  const Shape out_shape = net.forward(x, mode).shape();
  const Td weights = random_tensor(out_shape, 99);
  auto loss = [&] { return dot(net.forward(x, mode), weights); };
  net.forward(x, mode);
  const Td dx = net.backward(weights);
  const Td dx_copy = dx;
  EXPECT_LT(max_param_error(net.parameters(), loss), 1e-4);
  EXPECT_LT(max_input_error(x, dx_copy, loss), 1e-4);
}

}  // namespace

TEST(Layers, ConvIdentityKernel) {
  Conv3x3<double> conv("c", 1, 1, Init::he_uniform, 1);
  conv.weight().value.set_zero();
  conv.weight().value[4] = 1.0;
  conv.bias().value.set_zero();
  const Td x = random_tensor({2, 1, 5, 7}, 3);
  EXPECT_EQ(conv.forward(x, Mode::eval).data(), x.data());
}

TEST(Layers, ZeroWeightsGiveZeroOutput) {
  Actor<double> actor(ActorSpec{16, 16, {4, 4}, 8}, 1);
  for (Parameter<double>* p : actor.trainable_parameters()) p->value.set_zero();
  const Td out = actor.forward(random_tensor({3, 1, 16, 16}, 2), Mode::train);
  for (Index i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Layers, ShapeMismatchNamesLayer) {
  Dense<double> d("head.fc", 4, 2, Init::xavier_uniform, 1);
  try {
    d.forward(Td({1, 5}), Mode::eval);
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("head.fc"), std::string::npos);
  }
}

TEST(Layers, BackwardWithoutCacheThrows) {
  Dense<double> d("fc", 4, 2, Init::xavier_uniform, 1);
  EXPECT_THROW(d.backward(Td({1, 2})), RuntimeError);
  d.forward(Td({1, 4}), Mode::eval);
  EXPECT_THROW(d.backward(Td({1, 2})), RuntimeError);
}

TEST(GradientCheck, Conv) {
  Sequential<double> net;
  net.add<Conv3x3<double>>("conv", 2, 3, Init::he_uniform, 5);
  check_sequential(net, random_tensor({2, 2, 5, 4}, 1));
}

TEST(GradientCheck, BatchNormTrainAndBatchStats) {
  Sequential<double> net;
  auto& bn = net.add<BatchNorm<double>>("bn", 3);
  bn.gamma().value = random_tensor({3}, 7, 0.5, 1.5);
  bn.beta().value = random_tensor({3}, 8);
  check_sequential(net, random_tensor({4, 3, 3, 3}, 2));
  check_sequential(net, random_tensor({4, 3, 3, 3}, 3), Mode::batch_stats);
  Sequential<double> dense_bn;
  dense_bn.add<BatchNorm<double>>("bn1d", 5);
  check_sequential(dense_bn, random_tensor({6, 5}, 4));
}

TEST(GradientCheck, ReluPoolFlattenDenseTanh) {
  Sequential<double> net;
  net.add<Relu<double>>("relu");
  net.add<MaxPool2<double>>("pool");
  net.add<Flatten<double>>("flat");
  net.add<Dense<double>>("fc", 2 * 2 * 2, 3, Init::xavier_uniform, 3);
  net.add<Tanh<double>>("tanh");
  check_sequential(net, random_tensor({3, 2, 4, 4}, 5));
}

TEST(GradientCheck, TinyNet) {
  Sequential<double> net;
  net.add<Conv3x3<double>>("c1", 1, 2, Init::he_uniform, 1);
  net.add<Relu<double>>("r1");
  net.add<Conv3x3<double>>("c2", 2, 2, Init::he_uniform, 2);
  net.add<Flatten<double>>("f");
  net.add<Dense<double>>("d", 2 * 4 * 4, 1, Init::xavier_uniform, 3);
  check_sequential(net, random_tensor({2, 1, 4, 4}, 6));
}

TEST(GradientCheck, Actor) {
  Actor<double> actor(ActorSpec{8, 8, {3, 4}, 5}, 11);
  const Td x = random_tensor({4, 1, 8, 8}, 12, 0.0, 1.0);
  const Td w = random_tensor({4, 1}, 13);
  auto loss = [&] { return dot(actor.forward(x, Mode::train), w); };
  actor.forward(x, Mode::train);
  actor.backward(w);
  EXPECT_LT(max_param_error(actor.parameters(), loss), 1e-4);
}

TEST(GradientCheck, CriticParametersAndAction) {
  Critic<double> critic(CriticSpec{8, 8, {3, 2}, 4, {6, 5}}, 21);
  const Td s = random_tensor({4, 1, 8, 8}, 22, 0.0, 1.0);
  Td a = random_tensor({4, 1}, 23);
  const Td w = random_tensor({4, 1}, 24);
  auto loss = [&] { return dot(critic.forward(s, a, Mode::train), w); };
  critic.forward(s, a, Mode::train);
  const Td da = critic.backward(w);
  EXPECT_LT(max_param_error(critic.parameters(), loss), 1e-4);
  EXPECT_LT(max_input_error(a, da, loss), 1e-4);
}

TEST(GradientCheck, CriticThroughActor) {
  Actor<double> actor(ActorSpec{8, 8, {3}, 4}, 31);
  Critic<double> critic(CriticSpec{8, 8, {2}, 4, {5}}, 32);
  const Td s = random_tensor({5, 1, 8, 8}, 33, 0.0, 1.0);
  auto objective = [&] {
    const Td a = actor.forward(s, Mode::train);
    return critic.forward(s, a, Mode::batch_stats).data().mean();
  };
  const Td a = actor.forward(s, Mode::train);
  const Td q = critic.forward(s, a, Mode::batch_stats);
  Td g(q.shape());
  g.data().setConstant(1.0 / q.size());
  actor.backward(critic.backward(g, false));
  EXPECT_LT(max_param_error(actor.parameters(), objective), 1e-4);
}

TEST(GradientCheck, ZeroOutputGradient) {
  Actor<double> actor(ActorSpec{8, 8, {2}, 3}, 41);
  const Td x = random_tensor({3, 1, 8, 8}, 42);
  actor.forward(x, Mode::train);
  actor.backward(Td({3, 1}));
  for (Parameter<double>* p : actor.trainable_parameters()) EXPECT_EQ(p->grad.data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(BatchNorm, EvalIsFrozenAffine) {
  BatchNorm<double> bn("bn", 2);
  bn.running_mean().value = random_tensor({2}, 1);
  bn.running_var().value = random_tensor({2}, 2, 0.5, 2.0);
  bn.gamma().value = random_tensor({2}, 3);
  const Td x = random_tensor({3, 2, 2, 2}, 4);
  const Td y1 = bn.forward(x, Mode::eval);
  const Td y2 = bn.forward(x, Mode::eval);
  EXPECT_EQ(y1.data(), y2.data());
  // Affine: f(2x) - f(x) = f(x) - f(0).
  Td x2 = x;
  x2.data() *= 2.0;
  const Td zero_out = bn.forward(Td(x.shape()), Mode::eval);
  EXPECT_LT(((bn.forward(x2, Mode::eval).data() - y1.data()) - (y1.data() - zero_out.data())).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(BatchNorm, RunningStatsOnlyInTrainMode) {
  BatchNorm<double> bn("bn", 1);
  const Td x = random_tensor({8, 1, 2, 2}, 5, 2.0, 4.0);
  bn.forward(x, Mode::batch_stats);
  EXPECT_EQ(bn.running_mean().value[0], 0.0);
  bn.forward(x, Mode::train);
  EXPECT_NEAR(bn.running_mean().value[0], 0.01 * x.data().mean(), 1e-12);
}

TEST(Actor, OutputStrictlyInsideUnitInterval) {
  Actor<float> actor(ActorSpec{16, 16, {4, 8}, 8}, 3);
  Tensor<float> x({4, 1, 16, 16});
  x.data().setRandom();
  x.data() = x.data().cwiseAbs();
  x.data().head(256).setZero();
  x.data().segment(256, 256).setOnes();
  for (Mode mode : {Mode::eval, Mode::train}) {
    const auto y = actor.forward(x, mode);
    EXPECT_EQ(y.shape(), (Shape{4, 1}));
    for (Index i = 0; i < y.size(); ++i) {
      EXPECT_GT(y[i], -1.0f);
      EXPECT_LT(y[i], 1.0f);
    }
  }
}

TEST(Specs, ReferenceLayerGrammar) {
  const ActorSpec a = ActorSpec::reference();
  EXPECT_EQ(a.conv_channels, (std::vector<int>{32, 64, 64, 128, 256}));
  EXPECT_EQ(a.dense_units, 256);
  const CriticSpec c = CriticSpec::reference();
  EXPECT_EQ(c.conv_channels, (std::vector<int>{16, 32}));
  EXPECT_EQ(c.branch_units, 32);
  EXPECT_EQ(c.head_units, (std::vector<int>{256, 256}));
  Actor<float> actor(ActorSpec::reference(64, 64), 1);
  Critic<float> critic(CriticSpec::reference(64, 64), 1);
  Tensor<float> s({2, 1, 64, 64}), act({2, 1});
  EXPECT_EQ(actor.forward(s, Mode::eval).shape(), (Shape{2, 1}));
  EXPECT_EQ(critic.forward(s, act, Mode::eval).shape(), (Shape{2, 1}));
}

TEST(Determinism, ForwardBackwardBitReproducible) {
  Actor<float> a1(ActorSpec{16, 16, {4}, 4}, 9), a2(ActorSpec{16, 16, {4}, 4}, 9);
  Tensor<float> x({3, 1, 16, 16});
  x.data().setRandom();
  Tensor<float> g({3, 1});
  g.data().setConstant(0.3f);
  EXPECT_EQ(a1.forward(x, Mode::train).data(), a2.forward(x, Mode::train).data());
  a1.backward(g);
  a2.backward(g);
  const auto p1 = a1.parameters(), p2 = a2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i]->grad.data(), p2[i]->grad.data());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Actor<double> actor(ActorSpec{8, 8, {2}, 3}, 1);
  std::vector<Eigen::VectorXd> before;
  for (auto* p : actor.trainable_parameters()) before.push_back(p->value.data());
  actor.zero_grad();
  adam_step(actor, AdamConfig{});
  const auto after = actor.trainable_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i]->value.data(), before[i]);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Actor<double> actor(ActorSpec{8, 8, {2}, 3}, 1);
  std::vector<Eigen::VectorXd> before;
  for (auto* p : actor.trainable_parameters()) {
    before.push_back(p->value.data());
    p->grad = random_tensor(p->value.shape(), 4, -2.0, 2.0);
  }
  adam_step(actor, AdamConfig{.learning_rate = 1e-3});
  const auto params = actor.trainable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Index j = 0; j < params[i]->value.size(); ++j) {
      const double g = params[i]->grad[j];
      const double step = params[i]->value[j] - before[i][j];
      EXPECT_NEAR(step, -1e-3 * (g > 0 ? 1.0 : -1.0), 1e-3 * 1e-5);
    }
}

TEST(Adam, IdenticalNetsStayIdentical) {
  Actor<float> a(ActorSpec{8, 8, {2}, 3}, 5), b(ActorSpec{8, 8, {2}, 3}, 5);
  for (auto* n : {&a, &b})
    for (auto* p : n->trainable_parameters()) p->grad.data().setConstant(0.1f);
  adam_step(a, AdamConfig{});
  adam_step(b, AdamConfig{});
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value.data(), pb[i]->value.data());
}

TEST(SoftUpdate, Examples) {
  Actor<double> target(ActorSpec{8, 8, {2}, 3}, 1), online(ActorSpec{8, 8, {2}, 3}, 2);
  for (auto* p : target.parameters()) p->value.set_zero();
  for (auto* p : online.parameters()) p->value.data().setConstant(2.0);
  soft_update(target, online, 0.5);
  for (auto* p : target.parameters()) EXPECT_EQ(p->value.data().maxCoeff(), 1.0);
  soft_update(target, online, 0.0);
  for (auto* p : target.parameters()) EXPECT_EQ(p->value.data().minCoeff(), 1.0);
  soft_update(target, online, 1.0);
  for (auto* p : target.parameters()) EXPECT_EQ(p->value.data().minCoeff(), 2.0);
  Actor<double> other(ActorSpec{8, 8, {3}, 3}, 1);
  EXPECT_THROW(soft_update(other, online, 0.5), RuntimeError);
}

TEST(SoftUpdate, GeometricConvergence) {
  Actor<double> target(ActorSpec{8, 8, {2}, 3}, 1), online(ActorSpec{8, 8, {2}, 3}, 2);
  auto gap = [&] {
    double g = 0.0;
    const auto t = target.parameters(), o = online.parameters();
    for (std::size_t i = 0; i < t.size(); ++i) g += (t[i]->value.data() - o[i]->value.data()).squaredNorm();
    return std::sqrt(g);
  };
  const double g0 = gap();
  for (int i = 0; i < 10; ++i) soft_update(target, online, 0.1);
  EXPECT_NEAR(gap() / g0, std::pow(0.9, 10), 1e-9);
}

TEST(Checkpoint, RoundTripBitExact) {
  Critic<float> a(CriticSpec{8, 8, {2}, 3, {4}}, 1), b(CriticSpec{8, 8, {2}, 3, {4}}, 2);
  for (auto* p : a.trainable_parameters()) p->adam_m.data().setConstant(0.25f);
  a.adam_steps = 17;
  std::stringstream buf;
  save_params(a, buf);
  EXPECT_EQ(buf.str().substr(0, 4), "RGNP");
  load_params(b, buf);
  EXPECT_EQ(b.adam_steps, 17);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value.data(), pb[i]->value.data());
    EXPECT_EQ(pa[i]->adam_m.data(), pb[i]->adam_m.data());
  }
}

TEST(Checkpoint, TruncatedFileLeavesNetworkUntouched) {
  Actor<float> a(ActorSpec{8, 8, {2}, 3}, 1), b(ActorSpec{8, 8, {2}, 3}, 2);
  std::stringstream buf;
  save_params(a, buf);
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 7));
  const Eigen::VectorXf before = b.parameters()[0]->value.data();
  EXPECT_THROW(load_params(b, cut), DataError);
  EXPECT_EQ(b.parameters()[0]->value.data(), before);
}

TEST(Checkpoint, WrongSpecRejected) {
  Actor<float> actor(ActorSpec{8, 8, {2}, 3}, 1);
  Critic<float> critic(CriticSpec{8, 8, {2}, 3, {4}}, 1);
  std::stringstream buf;
  save_params(actor, buf);
  EXPECT_THROW(load_params(critic, buf), DataError);
  Actor<float> wider(ActorSpec{8, 8, {4}, 3}, 1);
  std::stringstream buf2;
  save_params(actor, buf2);
  EXPECT_THROW(load_params(wider, buf2), DataError);
}
