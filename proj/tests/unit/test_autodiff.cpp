#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "mergeguard/autodiff/linalg.hpp"
#include "mergeguard/autodiff/loss.hpp"
#include "mergeguard/autodiff/ops.hpp"
#include "mergeguard/autodiff/optim.hpp"
#include "support/oracles.hpp"

namespace mergeguard {
namespace {

using testing::naive_matmul;
using testing::numeric_gradient;
using testing::random_tensor;
using testing::random_tensor64;
using testing::relative_error;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor b = Tensor::matrix({{1.5f, -2}, {3, 0.25f}});
  EXPECT_EQ(linalg::matmul(eye, b), b);
}

TEST(Matmul, HandArithmetic) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{0}, {1}});
  EXPECT_EQ(linalg::matmul(a, b), Tensor::matrix({{2}, {4}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(11);
  const Tensor a = random_tensor({5, 7}, rng);
  const Tensor b = random_tensor({7, 3}, rng);
  const Tensor c = linalg::matmul(a, b);
  const auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-6) << i;
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(linalg::matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Backward, LinearSumMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 1);
    const Tensor64 x = random_tensor64({3, 4}, rng);
    const Tensor64 w = random_tensor64({5, 4}, rng);
    const Tensor64 b = random_tensor64({5}, rng);
    ad::Tape<double> tape;
    const auto wv = tape.variable(w);
    const auto loss = ad::sum(tape, ad::linear(tape, tape.constant(x), wv, tape.constant(b)));
    tape.backward(loss);
    const auto f = [&](const Tensor64& wp) {
      ad::Tape<double> t;
      return t.value(ad::sum(t, ad::linear(t, t.constant(x), t.constant(wp), t.constant(b)))).item();
    };
    EXPECT_LE(relative_error(tape.grad(wv), numeric_gradient(f, w)), 1e-3) << "seed " << seed;
  }
}

TEST(Backward, UnreachableParameterHasZeroGradient) {
  ad::Tape<double> tape;
  const auto used = tape.variable(Tensor64({3}, 2.0));
  const auto unused = tape.variable(Tensor64({2}, 5.0));
  tape.backward(ad::sum(tape, ad::square(tape, used)));
  const Tensor64 g = tape.grad(unused);
  for (const double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, HalfSquaredNormGradientIsTheVector) {
  ad::Tape<double> tape;
  const Tensor64 w({4}, std::vector<double>{1.0, -2.0, 0.5, 3.0});
  const auto wv = tape.variable(w);
  tape.backward(ad::affine(tape, ad::sum(tape, ad::square(tape, wv)), 0.5, 0.0));
  EXPECT_EQ(tape.grad(wv), w);
}

TEST(Backward, NonScalarLossIsAContractError) {
  ad::Tape<double> tape;
  const auto v = tape.variable(Tensor64({2}, 1.0));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Backward, MatmulMatchesFiniteDifferences) {
  Rng rng(3);
  const Tensor64 a = random_tensor64({3, 4}, rng);
  const Tensor64 b = random_tensor64({4, 2}, rng);
  ad::Tape<double> tape;
  const auto av = tape.variable(a);
  const auto bv = tape.variable(b);
  tape.backward(ad::sum(tape, ad::square(tape, ad::matmul(tape, av, bv))));
  const auto fa = [&](const Tensor64& ap) {
    ad::Tape<double> t;
    return t.value(ad::sum(t, ad::square(t, ad::matmul(t, t.constant(ap), t.constant(b))))).item();
  };
  const auto fb = [&](const Tensor64& bp) {
    ad::Tape<double> t;
    return t.value(ad::sum(t, ad::square(t, ad::matmul(t, t.constant(a), t.constant(bp))))).item();
  };
  EXPECT_LE(relative_error(tape.grad(av), numeric_gradient(fa, a)), 1e-3);
  EXPECT_LE(relative_error(tape.grad(bv), numeric_gradient(fb, b)), 1e-3);
}

TEST(Sgd, PlainStep) {
  Tensor p({1}, 1.0f);
  const ad::ParameterRef ref{"p", &p};
  ad::SgdState state(0.1, 0.0);
  const std::vector<Tensor> g{Tensor({1}, 2.0f)};
  ad::sgd_step(std::span(&ref, 1), g, state);
  EXPECT_FLOAT_EQ(p[0], 0.8f);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  Tensor p({3}, std::vector<float>{1, -2, 3});
  const Tensor before = p;
  const ad::ParameterRef ref{"p", &p};
  ad::SgdState state(0.5, 0.9);
  const std::vector<Tensor> g{Tensor({3})};
  ad::sgd_step(std::span(&ref, 1), g, state);
  EXPECT_EQ(p, before);
}

TEST(Sgd, MomentumRecurrence) {
  Tensor p({1}, 0.0f);
  const ad::ParameterRef ref{"p", &p};
  ad::SgdState state(1.0, 0.9);
  const std::vector<Tensor> g{Tensor({1}, 1.0f)};
  ad::sgd_step(std::span(&ref, 1), g, state);
  EXPECT_FLOAT_EQ(p[0], -1.0f);
  ad::sgd_step(std::span(&ref, 1), g, state);
  EXPECT_FLOAT_EQ(p[0], -2.9f);
}

TEST(Sgd, NonFiniteGradientNamesParameterAndLeavesAllUntouched) {
  Tensor a({1}, 1.0f), b({1}, 1.0f);
  const std::vector<ad::ParameterRef> refs{{"a", &a}, {"b.weight", &b}};
  ad::SgdState state(0.1, 0.0);
  const std::vector<Tensor> g{Tensor({1}, 1.0f), Tensor({1}, std::nanf(""))};
  try {
    ad::sgd_step(refs, g, state);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("b.weight"), std::string::npos);
  }
  EXPECT_EQ(a[0], 1.0f);
  EXPECT_EQ(b[0], 1.0f);
}

TEST(CrossEntropy, UniformLogits) {
  ad::Tape<double> tape;
  const std::vector<int> labels{1};
  const auto l = ad::cross_entropy(tape, tape.constant(Tensor64({1, 2})), labels);
  EXPECT_NEAR(tape.value(l).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTrueClass) {
  ad::Tape<float> tape;
  const std::vector<int> labels{0};
  const auto l =
      ad::cross_entropy(tape, tape.constant(Tensor({1, 3}, std::vector<float>{1000, 0, 0})), labels);
  EXPECT_NEAR(tape.value(l).item(), 0.0, 1e-6);
}

TEST(CrossEntropy, MatchesDirectDoubleEvaluation) {
  Rng rng(5);
  const Tensor logits = random_tensor({3, 4}, rng, 3.0);
  const std::vector<int> labels{2, 0, 3};
  ad::Tape<float> tape;
  const double got = tape.value(ad::cross_entropy(tape, tape.constant(logits), labels)).item();
  double ref = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(static_cast<double>(logits[i * 4 + j]));
    ref += std::log(z) - logits[i * 4 + labels[i]];
  }
  EXPECT_NEAR(got, ref / 3.0, 1e-5);
}

TEST(CrossEntropy, SoftmaxRowsSumToOne) {
  Rng rng(8);
  const Tensor probs = ad::softmax_rows(random_tensor({6, 5}, rng, 10.0));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += probs[i * 5 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CrossEntropy, OutOfRangeLabelIsADataError) {
  ad::Tape<float> tape;
  const std::vector<int> labels{2};
  EXPECT_THROW(ad::cross_entropy(tape, tape.constant(Tensor({1, 2})), labels), DataError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 2);
    const Tensor64 logits = random_tensor64({4, 3}, rng, 2.0);
    const std::vector<int> labels{0, 2, 1, 2};
    ad::Tape<double> tape;
    const auto lv = tape.variable(logits);
    tape.backward(ad::cross_entropy(tape, lv, labels));
    const auto f = [&](const Tensor64& l) {
      ad::Tape<double> t;
      return t.value(ad::cross_entropy(t, t.constant(l), labels)).item();
    };
    EXPECT_LE(relative_error(tape.grad(lv), numeric_gradient(f, logits)), 1e-3);
  }
}

TEST(SigmaMax, Identity) {
  EXPECT_NEAR(linalg::sigma_max(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})), 1.0, 1e-6);
}

TEST(SigmaMax, Diagonal) {
  EXPECT_NEAR(linalg::sigma_max(Tensor::matrix({{3, 0}, {0, 4}})), 4.0, 1e-5);
}

TEST(SigmaMax, ZeroMatrixIsZero) { EXPECT_EQ(linalg::sigma_max(Tensor({3, 2})), 0.0); }

TEST(SigmaMax, MatchesJacobiSvd) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 3);
    const Tensor m = random_tensor({6, 4}, rng);
    Eigen::MatrixXd e(6, 4);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 4; ++j) e(i, j) = m[i * 4 + j];
    const double ref = Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
    EXPECT_NEAR(linalg::sigma_max(m) / ref, 1.0, 1e-4) << "seed " << seed;
  }
}

TEST(SigmaMax, ScalesWithAbsoluteFactor) {
  Rng rng(21);
  const Tensor m = random_tensor({5, 5}, rng);
  Tensor scaled = m;
  for (auto& v : scaled.data()) v *= -2.5f;
  EXPECT_NEAR(linalg::sigma_max(scaled) / (2.5 * linalg::sigma_max(m)), 1.0, 1e-5);
}

}  // namespace
}  // namespace mergeguard
