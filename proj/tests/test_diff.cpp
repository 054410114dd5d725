#include <gtest/gtest.h>

#include <cmath>

#include "metacd/diff/grad_check.hpp"
#include "metacd/diff/ops.hpp"
#include "metacd/random.hpp"

using namespace metacd;
using namespace metacd::diff;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = scale * standard_normal(rng);
  return m;
}

// Scalarises any op output with fixed random weights so every entry of the
// adjoint is exercised.
Var weighted_sum(const Var& v, std::uint64_t seed = 99) {
  Var w = v.tape().constant(random_matrix(v.rows(), v.cols(), seed));
  return sum(hadamard(v, w));
}

double check(const LossBuilder& f, const ParamSet& theta, double step = 1e-6) {
  return finite_diff_check(f, theta, step).max_rel_error;
}

}  // namespace

TEST(Tape, LeafGradientOfSumIsOnes) {
  Tape t;
  Var x = t.leaf(random_matrix(3, 2, 1));
  t.backward(sum(x));
  EXPECT_TRUE(t.grad(x).isApprox(Matrix::Ones(3, 2)));
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape t;
  Var x = t.leaf(random_matrix(2, 2, 1));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, NonFiniteValuesRejectedAtRecordTime) {
  Tape t;
  Var x = t.leaf(Matrix::Constant(1, 1, -1.0));
  EXPECT_THROW(log(x), NumericalError);
  EXPECT_THROW(t.leaf(Matrix::Constant(1, 1, std::nan(""))), NumericalError);
}

TEST(Tape, StaleAndForeignVarsRejected) {
  Tape a, b;
  Var x = a.leaf(Matrix::Ones(1, 1));
  Var y = b.leaf(Matrix::Ones(1, 1));
  EXPECT_THROW(add(x, y), Error);
  a.reset();
  EXPECT_THROW(x.value(), Error);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(Matrix::Ones(2, 2));
  Var x = t.leaf(Matrix::Ones(2, 2));
  t.backward(sum(hadamard(c, x)));
  EXPECT_EQ(t.grad(c).norm(), 0.0);
  EXPECT_TRUE(t.grad(x).isApprox(Matrix::Ones(2, 2)));
}

TEST(Tape, RepeatedBackwardDoesNotAccumulate) {
  Tape t;
  Var x = t.leaf(Matrix::Constant(1, 1, 2.0));
  Var y = square(x);
  t.backward(y);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 4.0);
}

TEST(Tape, FanOutAccumulates) {
  Tape t;
  Var x = t.leaf(Matrix::Constant(1, 1, 3.0));
  t.backward(add(hadamard(x, x), x));  // x^2 + x
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Ops, BroadcastShapesValidated) {
  Tape t;
  Var a = t.leaf(Matrix::Ones(3, 2));
  EXPECT_NO_THROW(add(a, t.leaf(Matrix::Ones(1, 2))));
  EXPECT_NO_THROW(add(a, t.leaf(Matrix::Ones(1, 1))));
  EXPECT_THROW(add(a, t.leaf(Matrix::Ones(3, 1))), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, ElementwiseGradientsMatchFiniteDifferences) {
  ParamSet theta{{"a", random_matrix(3, 4, 1)}, {"b", random_matrix(3, 4, 2)}, {"r", random_matrix(1, 4, 3)}};
  const auto pos = [](const Var& v) { return add_scalar(square(v), 0.5); };
  const std::vector<std::pair<const char*, LossBuilder>> cases = {
      {"add", [](Tape&, const BoundParams& p) { return weighted_sum(add(p["a"], p["b"])); }},
      {"sub_row", [](Tape&, const BoundParams& p) { return weighted_sum(sub(p["a"], p["r"])); }},
      {"hadamard_row", [](Tape&, const BoundParams& p) { return weighted_sum(hadamard(p["a"], p["r"])); }},
      {"scale", [](Tape&, const BoundParams& p) { return weighted_sum(scale(p["a"], -1.7)); }},
      {"exp", [](Tape&, const BoundParams& p) { return weighted_sum(exp(p["a"])); }},
      {"log", [&](Tape&, const BoundParams& p) { return weighted_sum(log(pos(p["a"]))); }},
      {"sqrt", [&](Tape&, const BoundParams& p) { return weighted_sum(sqrt(pos(p["a"]))); }},
      {"tanh", [](Tape&, const BoundParams& p) { return weighted_sum(tanh(p["a"])); }},
      {"sigmoid", [](Tape&, const BoundParams& p) { return weighted_sum(sigmoid(p["a"])); }},
      {"reciprocal", [&](Tape&, const BoundParams& p) { return weighted_sum(reciprocal(pos(p["a"]))); }},
      {"softmax_rows", [](Tape&, const BoundParams& p) { return weighted_sum(softmax(p["a"], Axis::kCols)); }},
      {"softmax_cols", [](Tape&, const BoundParams& p) { return weighted_sum(softmax(p["a"], Axis::kRows)); }},
      {"mean_rows", [](Tape&, const BoundParams& p) { return weighted_sum(mean_rows(p["a"])); }},
      {"sum_rows", [](Tape&, const BoundParams& p) { return weighted_sum(sum_rows(p["a"])); }},
      {"mean", [](Tape&, const BoundParams& p) { return mean(square(p["a"])); }},
      {"transpose", [](Tape&, const BoundParams& p) { return weighted_sum(transpose(p["a"])); }},
      {"matmul", [](Tape&, const BoundParams& p) { return weighted_sum(matmul(p["a"], transpose(p["b"]))); }},
      {"concat", [](Tape&, const BoundParams& p) { return weighted_sum(concat_cols({p["a"], p["b"]})); }},
      {"concat_rows", [](Tape&, const BoundParams& p) { return weighted_sum(concat_rows({p["a"], p["r"]})); }},
      {"slice", [](Tape&, const BoundParams& p) { return weighted_sum(slice_cols(p["a"], 1, 2)); }},
      {"gather", [](Tape&, const BoundParams& p) { return weighted_sum(gather_rows(p["a"], {2, 0, 2})); }},
  };
  for (const auto& [name, f] : cases) EXPECT_LT(check(f, theta), 1e-6) << name;
}

TEST(Ops, ReluAndClampGradientsAwayFromKinks) {
  ParamSet theta{{"a", Matrix{{0.3, -0.7}, {1.2, -2.5}}}};
  EXPECT_LT(check([](Tape&, const BoundParams& p) { return weighted_sum(relu(p["a"])); }, theta), 1e-7);
  EXPECT_LT(check([](Tape&, const BoundParams& p) { return weighted_sum(clamp(p["a"], -1.0, 1.0)); }, theta), 1e-7);
}

TEST(Ops, SolveSpdMatchesDirectSolveAndGradients) {
  const Matrix h = random_matrix(6, 4, 5);
  const Matrix m = h.transpose() * h;
  const Matrix b = random_matrix(4, 1, 6);
  Tape t;
  Var w = solve_spd(t.constant(m), t.constant(b), 0.3);
  const Matrix direct = (m + 0.3 * Matrix::Identity(4, 4)).inverse() * b;
  EXPECT_LT((w.value() - direct).norm(), 1e-12);

  ParamSet theta{{"h", h}, {"b", b}};
  const LossBuilder f = [](Tape&, const BoundParams& p) {
    Var gram = matmul(transpose(p["h"]), p["h"]);
    return weighted_sum(solve_spd(gram, p["b"], 0.3));
  };
  EXPECT_LT(check(f, theta), 1e-6);
}

TEST(Ops, SolveSpdRejectsNonPositiveLambda) {
  Tape t;
  Var m = t.constant(Matrix::Identity(2, 2));
  Var b = t.constant(Matrix::Ones(2, 1));
  EXPECT_THROW(solve_spd(m, b, 0.0), ConfigError);
  EXPECT_THROW(solve_spd(m, b, -1.0), ConfigError);
}

TEST(Ops, DoubleCenterEqualsHKH) {
  const Matrix k = random_matrix(5, 5, 7);
  const Matrix h = Matrix::Identity(5, 5) - Matrix::Constant(5, 5, 1.0 / 5);
  Tape t;
  Var c = double_center(t.constant(k));
  EXPECT_LT((c.value() - h * k * h).norm(), 1e-12);
  ParamSet theta{{"k", k}};
  EXPECT_LT(check([](Tape&, const BoundParams& p) { return weighted_sum(double_center(p["k"])); }, theta), 1e-6);
}

TEST(Ops, PairwiseSqdistValuesAndGradient) {
  const Matrix x = random_matrix(4, 1, 8);
  Tape t;
  Var d2 = pairwise_sqdist(t.constant(x));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(d2.value()(i, j), (x(i) - x(j)) * (x(i) - x(j)));
  ParamSet theta{{"x", x}};
  EXPECT_LT(check([](Tape&, const BoundParams& p) { return weighted_sum(pairwise_sqdist(p["x"])); }, theta), 1e-6);
}

TEST(Ops, MedianPairwiseDistanceOddAndEven) {
  Tape t;
  // 3 rows -> 3 pairs (odd): distances 1, 3, 4.
  Var odd = median_pairwise_distance(t.constant(Matrix{{0.0}, {1.0}, {4.0}}));
  EXPECT_DOUBLE_EQ(odd.scalar(), 3.0);
  // 4 rows -> 6 pairs (even): distances 1,2,3,1,2,1 -> sorted 1,1,1,2,2,3 -> (1+2)/2.
  Var even = median_pairwise_distance(t.constant(Matrix{{0.0}, {1.0}, {2.0}, {3.0}}));
  EXPECT_DOUBLE_EQ(even.scalar(), 1.5);
  ParamSet theta{{"x", random_matrix(7, 1, 9)}};
  EXPECT_LT(check([](Tape&, const BoundParams& p) { return median_pairwise_distance(p["x"]); }, theta), 1e-7);
}

TEST(Ops, StraightThroughForwardsHardPassesSoftGradient) {
  Tape t;
  Var soft = t.leaf(Matrix{{0.2, 0.7}});
  Var st = straight_through(soft, Matrix{{0.0, 1.0}});
  EXPECT_EQ(st.value(), (Matrix{{0.0, 1.0}}));
  t.backward(sum(scale(st, 3.0)));
  EXPECT_TRUE(t.grad(soft).isApprox(Matrix::Constant(1, 2, 3.0)));
}

TEST(Ops, StopGradientBlocksFlow) {
  Tape t;
  Var x = t.leaf(Matrix::Constant(1, 1, 2.0));
  t.backward(hadamard(stop_gradient(x), x));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 2.0);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A primitive whose recorded adjoint is deliberately off by a factor of 2.
  const LossBuilder broken = [](Tape& t, const BoundParams& p) {
    const Var& x = p["x"];
    const std::size_t ix = x.index();
    Var y = t.record("broken_square", x.value().cwiseProduct(x.value()), {x},
                     [ix](Tape& tt, std::size_t, const Matrix& g) {
                       tt.accumulate(ix, g.cwiseProduct(tt.value_at(ix)));
                     });
    return sum(y);
  };
  ParamSet theta{{"x", Matrix{{1.0, -2.0}}}};
  EXPECT_GT(check(broken, theta), 0.4);
}

TEST(GradCheck, RejectsNonPositiveStep) {
  ParamSet theta{{"x", Matrix::Ones(1, 1)}};
  EXPECT_THROW(finite_diff_check([](Tape&, const BoundParams& p) { return sum(p["x"]); }, theta, 0.0), ConfigError);
}

TEST(Random, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  Rng a(5), b(5);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(standard_normal(a), standard_normal(b));
}

TEST(Random, UniformOpenNeverHitsEndpoints) {
  Rng rng(0);
  for (int k = 0; k < 100000; ++k) {
    const double u = uniform_open(rng);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}
