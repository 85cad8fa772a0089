#include <gtest/gtest.h>

#include "mergeguard/nn/model.hpp"
#include "mergeguard/nn/training.hpp"
#include "mergeguard/trojan/dataset.hpp"
#include "mergeguard/trojan/metrics.hpp"
#include "support/oracles.hpp"

namespace mergeguard::nn {
namespace {

using testing::naive_conv;
using testing::numeric_gradient;
using testing::random_tensor;
using testing::random_tensor64;
using testing::relative_error;

constexpr ActivationKind kKinds[] = {ActivationKind::PReLU, ActivationKind::ELU,
                                     ActivationKind::GELU, ActivationKind::SiLU};

TEST(Prelu, Examples) {
  EXPECT_EQ(prelu(-3.0, 1.0), -3.0);
  EXPECT_EQ(prelu(-2.0, 0.0), 0.0);
  EXPECT_EQ(prelu(-2.0, 0.5), -1.0);
}

TEST(EluLinearized, Examples) {
  EXPECT_EQ(elu_linearized(-5.0, 1.0, 1.0), -5.0);
  EXPECT_NEAR(elu_linearized(-1.0, 0.0, 1.0), -0.632121, 1e-6);
  for (const double a : {0.0, 0.3, 1.0}) EXPECT_EQ(elu_linearized(2.0, a, 1.0), 2.0);
}

TEST(GeluLinearized, Examples) {
  for (const double x : {-3.0, -0.5, 0.0, 2.5}) EXPECT_NEAR(gelu_linearized(x, 1.0), x, 1e-15);
  EXPECT_EQ(gelu_linearized(0.0, 0.0), 0.0);
  EXPECT_NEAR(gelu_linearized(1.0, 0.0), 0.841345, 1e-6);
}

TEST(SiluLinearized, Examples) {
  for (const double x : {-3.0, -0.5, 0.0, 2.5}) EXPECT_NEAR(silu_linearized(x, 1.0), x, 1e-15);
  EXPECT_EQ(silu_linearized(0.0, 0.0), 0.0);
  EXPECT_EQ(silu_linearized(0.0, 0.5), 0.0);
  EXPECT_NEAR(silu_linearized(2.0, 0.5), 1.880797, 1e-6);
}

TEST(ClampAlpha, Examples) {
  EXPECT_EQ(clamp_alpha(0.0), 0.5);
  EXPECT_NEAR(clamp_alpha(20.0), 1.0, 1e-8);
  EXPECT_NEAR(clamp_alpha(-2.0), 0.119203, 1e-6);
}

TEST(ClampAlpha, InitialisedNearZero) {
  const auto act = ParametricActivation::wrapped(ActivationKind::PReLU, 0.01);
  EXPECT_NEAR(act.raw_alpha[0], -4.59512, 1e-4);
  EXPECT_NEAR(act.alpha(), 0.01, 1e-7);
}

TEST(Activations, IdentityAtOneAndBaseAtZeroOnGrid) {
  for (const auto kind : kKinds) {
    for (int i = 0; i <= 2000; ++i) {
      const float x = -10.0f + 0.01f * static_cast<float>(i);
      const auto one = ParametricActivation::pinned(kind, 1.0f);
      const auto zero = ParametricActivation::base(kind);
      EXPECT_NEAR(one.apply(x), x, 1e-6) << to_string(kind) << " x=" << x;
      EXPECT_NEAR(zero.apply(x), base_activation<float>(kind, x, 1.0f), 1e-6)
          << to_string(kind) << " x=" << x;
    }
  }
}

TEST(Activations, PreluAlphaDerivativeIsNegativePart) {
  for (const double x : {-3.0, -0.25, 0.0, 0.5, 4.0}) {
    const double step = 1e-3;
    const double fd = (prelu(x, 0.4 + step) - prelu(x, 0.4 - step)) / (2 * step);
    EXPECT_NEAR(fd, std::min(0.0, x), 1e-12);
    EXPECT_EQ(evaluate_activation(ActivationKind::PReLU, x, 0.4, 1.0).d_alpha, std::min(0.0, x));
  }
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  for (const auto kind : kKinds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed, 4);
      const Tensor64 x = random_tensor64({2, 5}, rng, 2.0);
      const Tensor64 raw = Tensor64({1}, rng.normal());
      const double beta = 1.3;
      const auto loss = [&](ad::Tape<double>& t, ad::Var xv, ad::Var rv) {
        const auto y = ops::activation(t, xv, ad::logistic(t, rv), kind, beta);
        return ad::sum(t, ad::square(t, y));
      };
      ad::Tape<double> tape;
      const auto xv = tape.variable(x);
      const auto rv = tape.variable(raw);
      tape.backward(loss(tape, xv, rv));
      const auto fx = [&](const Tensor64& xp) {
        ad::Tape<double> t;
        return t.value(loss(t, t.constant(xp), t.constant(raw))).item();
      };
      const auto fr = [&](const Tensor64& rp) {
        ad::Tape<double> t;
        return t.value(loss(t, t.constant(x), t.constant(rp))).item();
      };
      EXPECT_LE(relative_error(tape.grad(xv), numeric_gradient(fx, x)), 1e-3)
          << to_string(kind) << " seed " << seed;
      EXPECT_LE(relative_error(tape.grad(rv), numeric_gradient(fr, raw)), 1e-3)
          << to_string(kind) << " seed " << seed;
    }
  }
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({2, 1, 4, 4}, rng);
  const Tensor y = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}), 1, 0);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, OnesKernelOnConstantField) {
  const Tensor y = conv2d_forward(Tensor({1, 1, 5, 5}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f),
                                  Tensor({1}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (const float v : y.data()) EXPECT_EQ(v, 9.0f);
}

TEST(Conv2d, MatchesSixLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed, 5);
    const std::size_t stride = 1 + seed % 2, padding = seed % 3;
    const Tensor x = random_tensor({2, 3, 7, 7}, rng);
    const Tensor k = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor y = conv2d_forward(x, k, b, stride, padding);
    std::size_t ho = 0, wo = 0;
    const auto ref = naive_conv(x, k, b, stride, padding, ho, wo);
    ASSERT_EQ(y.shape(), (Shape{2, 4, ho, wo}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
  }
}

TEST(Conv2d, NonIntegerOutputSizeThrows) {
  EXPECT_THROW(conv2d_forward(Tensor({1, 1, 6, 6}), Tensor({1, 1, 3, 3}), Tensor({1}), 2, 0),
               DimensionError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 6);
    const Tensor64 x = random_tensor64({2, 2, 5, 5}, rng);
    const Tensor64 k = random_tensor64({3, 2, 3, 3}, rng);
    const Tensor64 b = random_tensor64({3}, rng);
    const std::size_t padding = seed % 2;
    const auto loss = [&](ad::Tape<double>& t, ad::Var xv, ad::Var kv, ad::Var bv) {
      return ad::sum(t, ad::square(t, ops::conv2d(t, xv, kv, bv, 1, padding)));
    };
    ad::Tape<double> tape;
    const auto xv = tape.variable(x), kv = tape.variable(k), bv = tape.variable(b);
    tape.backward(loss(tape, xv, kv, bv));
    const auto at = [&](int which) {
      return [&, which](const Tensor64& p) {
        ad::Tape<double> t;
        const auto xx = t.constant(which == 0 ? p : x);
        const auto kk = t.constant(which == 1 ? p : k);
        const auto bb = t.constant(which == 2 ? p : b);
        return t.value(loss(t, xx, kk, bb)).item();
      };
    };
    EXPECT_LE(relative_error(tape.grad(xv), numeric_gradient(at(0), x)), 1e-3) << seed;
    EXPECT_LE(relative_error(tape.grad(kv), numeric_gradient(at(1), k)), 1e-3) << seed;
    EXPECT_LE(relative_error(tape.grad(bv), numeric_gradient(at(2), b)), 1e-3) << seed;
  }
}

TEST(MaxPool, GradientRoutesToArgmax) {
  Rng rng(2);
  const Tensor64 x = random_tensor64({1, 2, 4, 4}, rng);
  const auto loss = [](ad::Tape<double>& t, ad::Var v) {
    return ad::sum(t, ad::square(t, ops::maxpool2d(t, v, 2)));
  };
  ad::Tape<double> tape;
  const auto xv = tape.variable(x);
  tape.backward(loss(tape, xv));
  const auto f = [&](const Tensor64& p) {
    ad::Tape<double> t;
    return t.value(loss(t, t.constant(p))).item();
  };
  EXPECT_LE(relative_error(tape.grad(xv), numeric_gradient(f, x, 1e-5)), 1e-3);
}

Model small_model(std::uint64_t seed, std::size_t in = 6, std::size_t hidden = 5,
                  std::size_t classes = 3) {
  Rng rng(seed, 7);
  Model m({in}, classes);
  m.add(DenseLayer::init(in, hidden, rng));
  m.add(ParametricActivation::wrapped(ActivationKind::PReLU, 0.2));
  m.add(DenseLayer::init(hidden, classes, rng));
  return m;
}

TEST(CompositeLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model model = small_model(seed);
    Rng rng(seed, 8);
    const Tensor64 x = random_tensor64({4, 6}, rng);
    const std::vector<int> labels{0, 2, 1, 1};
    const double lambda = 0.7;
    const auto values = model.parameter_values<double>();
    const auto evaluate = [&](const std::vector<Tensor64>& params) {
      ad::Tape<double> t;
      const auto vars = Model::bind(t, params, false);
      return t.value(composite_loss(t, model, vars, t.constant(x), labels, lambda).total).item();
    };
    ad::Tape<double> tape;
    const auto vars = Model::bind(tape, values, true);
    tape.backward(composite_loss(tape, model, vars, tape.constant(x), labels, lambda).total);
    for (std::size_t p = 0; p < values.size(); ++p) {
      const auto f = [&](const Tensor64& v) {
        auto params = values;
        params[p] = v;
        return evaluate(params);
      };
      // A small step keeps central differences off the PReLU kink.
      EXPECT_LE(relative_error(tape.grad(vars[p]), numeric_gradient(f, values[p], 1e-6)), 1e-3)
          << model.parameter_names()[p] << " seed " << seed;
    }
  }
}

TEST(CompositeLoss, DecomposesIntoCrossEntropyAndPenalty) {
  const Model model = small_model(4);
  Rng rng(9);
  const Tensor x = random_tensor({5, 6}, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1};
  ad::Tape<float> tape;
  const auto vars = Model::bind(tape, model.parameter_values<float>(), false);
  const auto loss = composite_loss(tape, model, vars, tape.constant(x), labels, 2.0);
  const double alpha = std::get<ParametricActivation>(model.layer(1)).alpha();
  const double penalty = 2.0 * (1.0 - alpha) * (1.0 - alpha);
  EXPECT_NEAR(tape.value(loss.regularizer).item(), penalty, 1e-5);
  EXPECT_NEAR(tape.value(loss.total).item(),
              tape.value(loss.cross_entropy).item() + penalty, 1e-5);
}

TEST(Model, RejectsShapeMismatchAndStaysUnchanged) {
  Rng rng(1);
  Model m({4}, 2);
  m.add(DenseLayer::init(4, 3, rng));
  EXPECT_THROW(m.add(DenseLayer::init(5, 2, rng)), DimensionError);
  EXPECT_EQ(m.size(), 1u);
  EXPECT_THROW(m.replace(0, 1, DenseLayer::init(5, 3, rng)), DimensionError);
  EXPECT_EQ(std::get<DenseLayer>(m.layer(0)).in(), 4u);
}

TEST(Model, ActivationsPrefixMatchesLayerwiseEvaluation) {
  const Model m = small_model(2);
  Rng rng(3);
  const Tensor x = random_tensor({7, 6}, rng);
  EXPECT_EQ(m.activations(x, 0), x);
  EXPECT_EQ(m.activations(x, 3), m.logits(x));
  const Tensor h = m.activations(x, 1);
  EXPECT_EQ(h.shape(), (Shape{7, 5}));
}

TEST(Training, MlpReachesHighAccuracyOnSyntheticShapes) {
  const auto train_set = trojan::synth_shapes(2000, 4, 16, 16, 101);
  const auto test_set = trojan::synth_shapes(1000, 4, 16, 16, 202);
  Rng rng(77);
  Model m({1, 16, 16}, 4);
  m.add(Flatten{});
  m.add(DenseLayer::init(256, 64, rng));
  m.add(ParametricActivation::base(ActivationKind::PReLU));
  m.add(DenseLayer::init(64, 4, rng));
  TrainOptions o;
  o.epochs = 10;
  o.batch_size = 32;
  o.learning_rate = 0.05;
  o.seed = 5;
  train(m, train_set.images, train_set.labels, o);
  EXPECT_GE(trojan::test_accuracy(m, test_set), 0.95);
}

TEST(Training, FixedSeedGivesBitIdenticalTrajectory) {
  const auto data = trojan::synth_shapes(256, 4, 8, 8, 9);
  const auto run = [&] {
    Model m = trojan::victim_model({1, 8, 8}, 4, 3, 16);
    TrainOptions o;
    o.epochs = 2;
    o.seed = 11;
    const auto history = train(m, data.images, data.labels, o);
    return std::make_pair(m.parameter_values<float>(), history.steps.back().loss);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Training, PenaltyAloneRaisesAlphaEveryStep) {
  Model m = small_model(6);
  Rng rng(10);
  const Tensor x = random_tensor({32, 6}, rng);
  const std::vector<int> labels(32, 1);
  double previous = std::get<ParametricActivation>(m.layer(1)).alpha();
  for (int step = 0; step < 20; ++step) {
    TrainOptions o;
    o.epochs = 1;
    o.batch_size = 32;
    o.learning_rate = 0.5;
    o.momentum = 0.0;
    o.lambda = 1.0;
    o.ce_weight = 0.0;
    train(m, x, labels, o);
    const double alpha = std::get<ParametricActivation>(m.layer(1)).alpha();
    EXPECT_GT(alpha, previous) << "step " << step;
    previous = alpha;
  }
}

}  // namespace
}  // namespace mergeguard::nn
