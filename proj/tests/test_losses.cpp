#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "metacd/diff/grad_check.hpp"
#include "metacd/losses.hpp"
#include "support/oracles.hpp"

using namespace metacd;
using namespace metacd::losses;
using diff::Tape;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = standard_normal(rng);
  return m;
}

double bernoulli_kl(double p, double q) { return p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q)); }

}  // namespace

TEST(Recon, IsMeanSquaredResidual) {
  Tape t;
  const Matrix x = random_matrix(5, 3, 1), y = random_matrix(5, 3, 2);
  EXPECT_NEAR(recon_loss(t.constant(x), t.constant(y)).scalar(), (x - y).squaredNorm() / 15.0, 1e-15);
}

TEST(IntvSparsity, IsMeanSigmoid) {
  Tape t;
  Matrix z(1, 3);
  z << -2.0, 0.0, 1.0;
  const double expected = (1 / (1 + std::exp(2.0)) + 0.5 + 1 / (1 + std::exp(-1.0))) / 3.0;
  EXPECT_NEAR(intv_sparsity(t.constant(z)).scalar(), expected, 1e-15);
}

TEST(Hsic, MatchesDoubleLoopOracle) {
  LossWeights w;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix r = random_matrix(9 + static_cast<int>(seed), 2 + static_cast<int>(seed % 3), 10 + seed);
    Tape t;
    EXPECT_NEAR(hsic_residual(t.constant(r), w).scalar(), oracle::hsic(r), 1e-10) << "seed " << seed;
  }
}

TEST(Hsic, DependentColumnsScoreHigher) {
  LossWeights w;
  Matrix indep = random_matrix(60, 2, 3);
  Matrix dep = indep;
  dep.col(1) = dep.col(0).array().square();
  Tape t;
  const double hi = hsic_residual(t.constant(dep), w).scalar();
  const double lo = hsic_residual(t.constant(indep), w).scalar();
  EXPECT_GT(hi, 5.0 * lo);
  EXPECT_GE(lo, 0.0);
}

TEST(Hsic, FixedBandwidthAndDegenerateCases) {
  LossWeights w;
  w.hsic_bandwidth_mode = BandwidthMode::kFixed;
  w.hsic_fixed_bandwidth = 0.7;
  Tape t;
  const Matrix r = random_matrix(8, 2, 4);
  // Constant column: centred kernel is zero, so HSIC vanishes.
  Matrix flat = r;
  flat.col(1).setConstant(3.0);
  EXPECT_NEAR(hsic_residual(t.constant(flat), w).scalar(), 0.0, 1e-15);
  EXPECT_EQ(hsic_residual(t.constant(r.leftCols(1)), w).scalar(), 0.0);
  EXPECT_THROW(hsic_residual(t.constant(r.topRows(3)), w), ShapeError);
}

TEST(Hsic, SubsamplesLongInputs) {
  LossWeights w;
  w.hsic_max_rows = 10;
  const Matrix r = random_matrix(40, 3, 5);
  Tape t;
  EXPECT_NEAR(hsic_residual(t.constant(r), w).scalar(), oracle::hsic(r.topRows(10)), 1e-10);
  Rng rng(6);
  const double sub = hsic_residual(t.constant(r), w, &rng).scalar();
  EXPECT_TRUE(std::isfinite(sub));
}

TEST(Hsic, GradientMatchesFiniteDifferences) {
  LossWeights w;
  diff::ParamSet theta;
  theta.emplace("r", random_matrix(8, 3, 7));
  const diff::LossBuilder f = [&](Tape&, const diff::BoundParams& p) { return hsic_residual(p["r"], w); };
  EXPECT_LT(diff::finite_diff_check(f, theta, 1e-6).max_rel_error, 1e-4);
}

TEST(GraphSparsity, MatchesBernoulliKl) {
  Tape t;
  Matrix p(3, 3);
  p << 0.9, 0.2, 0.5, 0.05, 0.3, 0.7, 0.1, 0.6, 0.4;
  double expected = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (r != c) expected += bernoulli_kl(p(r, c), 0.1);
  EXPECT_NEAR(graph_sparsity(t.constant(p), 0.1).scalar(), expected / 6.0, 1e-14);
  EXPECT_NEAR(graph_sparsity(t.constant(Matrix::Constant(3, 3, 0.1)), 0.1).scalar(), 0.0, 1e-15);
}

TEST(GraphSparsity, ClipsExtremesAndValidates) {
  Tape t;
  const double v = graph_sparsity(t.constant(Matrix::Ones(2, 2)), 0.1).scalar();
  EXPECT_NEAR(v, bernoulli_kl(1.0 - 1e-6, 0.1), 1e-9);
  EXPECT_THROW(graph_sparsity(t.constant(Matrix::Zero(2, 3)), 0.1), ShapeError);
  EXPECT_THROW(graph_sparsity(t.constant(Matrix::Zero(2, 2)), 1.0), ConfigError);
}

TEST(GraphSparsity, FavoursSparseGraphs) {
  Tape t;
  EXPECT_LT(graph_sparsity(t.constant(Matrix::Constant(4, 4, 0.05)), 0.1).scalar(),
            graph_sparsity(t.constant(Matrix::Constant(4, 4, 0.6)), 0.1).scalar());
}

TEST(GraphSparsity, GradientThroughRelaxedSamples) {
  diff::ParamSet theta;
  theta.emplace("phi", random_matrix(3, 3, 8));
  theta.emplace("psi", random_matrix(1, 3, 9));
  const diff::LossBuilder f = [&](Tape&, const diff::BoundParams& p) {
    Rng rng(10);
    return graph_sparsity(soft_edge_probabilities(p["phi"], p["psi"], 0.8, 0.8, 4, rng), 0.1);
  };
  EXPECT_LT(diff::finite_diff_check(f, theta, 1e-6).max_rel_error, 1e-4);
}

TEST(TotalLoss, CombinesWeightedComponents) {
  Tape t;
  LossWeights w;
  w.lambda_i = 0.5;
  w.lambda_h = 2.0;
  w.lambda_g = 3.0;
  auto scalar = [&](double v) { return t.constant(Matrix::Constant(1, 1, v)); };
  const std::vector<TaskLosses> tasks = {{0, scalar(1.0), scalar(2.0), scalar(3.0)},
                                         {1, scalar(4.0), scalar(0.0), scalar(1.0)}};
  const double expected = 0.5 * ((1.0 + 1.0 + 6.0) + (4.0 + 0.0 + 2.0)) + 3.0 * 0.25;
  EXPECT_NEAR(total_loss(tasks, scalar(0.25), w).scalar(), expected, 1e-15);
  EXPECT_THROW(total_loss({}, scalar(0.0), w), ConfigError);
}

TEST(TotalLoss, NonFiniteComponentNamesItself) {
  Tape t;
  // Squared distances overflow inside the kernel.
  const Matrix huge = random_matrix(6, 2, 11) * 1e200;
  try {
    component("hsic", 4, [&] { return hsic_residual(t.constant(huge), LossWeights{}); });
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("hsic"), std::string::npos) << msg;
    EXPECT_NE(msg.find("task 4"), std::string::npos) << msg;
  }
  EXPECT_NEAR(component("reconstruction", 0, [&] { return t.constant(Matrix::Constant(1, 1, 2.0)); }).scalar(), 2.0,
              0.0);
}
