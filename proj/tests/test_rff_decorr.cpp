#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cimil/rff_decorr.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

using namespace cimil;

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

int mode_index(DecorrMode m) {
  return m == DecorrMode::kCov ? 0 : (m == DecorrMode::kInprod ? 1 : 2);
}

}  // namespace

TEST(RffMap, DeterministicAndInRange) {
  const RffMap a = build_rff_map(1, 42), b = build_rff_map(1, 42);
  EXPECT_EQ(a.omega, b.omega);
  EXPECT_EQ(a.phi, b.phi);
  const RffMap big = build_rff_map(500, 3);
  for (double p : big.phi) {
    EXPECT_GE(p, 0.0);
    EXPECT_LT(p, 2.0 * std::numbers::pi);
  }
  EXPECT_THROW(build_rff_map(0, 1), Error);
}

TEST(RffMap, FrequencyMoments) {
  const RffMap map = build_rff_map(10000, 17);
  const double mean = map.omega.mean();
  const double var = (map.omega.array() - mean).square().sum() / (map.omega.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(var, 1.0, 0.1);
}

TEST(RffMap, KernelApproximation) {
  const RffMap map = build_rff_map(4096, 23);
  for (auto [a, b] : std::vector<std::pair<double, double>>{{0.0, 0.0}, {0.3, -0.2}, {1.0, 2.0},
                                                            {-1.5, 0.5}}) {
    double avg = 0.0;
    for (int j = 0; j < map.samples(); ++j) {
      avg += 2.0 * std::cos(map.omega[j] * a + map.phi[j]) * std::cos(map.omega[j] * b + map.phi[j]);
    }
    avg /= map.samples();
    EXPECT_NEAR(avg, std::exp(-(a - b) * (a - b) / 2.0), 0.05) << a << "," << b;
  }
}

TEST(ApplyRff, ZeroFrequencyAndZeroPhase) {
  std::mt19937_64 rng(1);
  RffMap map = build_rff_map(2, 5);
  map.omega[0] = 0.0;
  map.phi[1] = 0.0;
  const Matrix h = oracle::random_matrix(rng, 3, 4);
  const Matrix o = apply_rff(map, h);
  ASSERT_EQ(o.cols(), 8);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(o(i, c), kSqrt2 * std::cos(map.phi[0]));

  const Matrix z = apply_rff(map, Matrix::Zero(2, 3));
  for (int i = 0; i < 2; ++i)
    for (int c = 3; c < 6; ++c) EXPECT_NEAR(z(i, c), 1.414214, 1e-6);
}

TEST(ApplyRff, ScalarLoopOracleAndRange) {
  std::mt19937_64 rng(2);
  for (int m : {1, 3}) {
    const RffMap map = build_rff_map(m, 100 + m);
    const Matrix h = oracle::random_matrix(rng, 6, 5, 3.0);
    const Matrix o = apply_rff(map, h);
    ASSERT_EQ(o.rows(), 6);
    ASSERT_EQ(o.cols(), 5 * m);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 5; ++c) {
          const double expect = std::sqrt(2.0) * std::cos(map.omega[j] * h(i, c) + map.phi[j]);
          EXPECT_NEAR(o(i, j * 5 + c), expect, 1e-15);
          EXPECT_LE(std::abs(o(i, j * 5 + c)), kSqrt2);
        }
  }
}

TEST(ApplyRff, NonFiniteInputRejected) {
  Matrix h = Matrix::Zero(2, 2);
  h(1, 1) = std::nan("");
  EXPECT_THROW(apply_rff(build_rff_map(1, 1), h), Error);
}

TEST(Reweight, Examples) {
  std::mt19937_64 rng(3);
  const Matrix f = oracle::random_matrix(rng, 3, 4);
  EXPECT_EQ(reweight(f, Vector::Ones(3)), f);
  Vector u(3);
  u << 2.0, 0.5, 0.5;
  const Matrix r = reweight(f, u);
  EXPECT_EQ(r, oracle::scale_rows(f, u));
  EXPECT_THROW(reweight(f, Vector::Ones(2)), Error);
}

TEST(Covariance, HandExamples) {
  Matrix a(2, 4);
  a << 1, -1, 1, -1, 1, -1, 1, -1;
  const Matrix c = covariance_matrix(a);
  EXPECT_NEAR(c(0, 1), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(c(0, 0), 4.0 / 3.0, 1e-15);

  Matrix b(2, 4);
  b << 1, -1, 0, 0, 0, 0, 1, -1;
  EXPECT_NEAR(covariance_matrix(b)(0, 1), 0.0, 1e-15);

  Matrix k(3, 3);
  k << 2, 2, 2, 1, 5, -2, 0, 3, 1;
  const Matrix ck = covariance_matrix(k);
  for (int j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(ck(0, j), 0.0);
    EXPECT_DOUBLE_EQ(ck(j, 0), 0.0);
  }
  EXPECT_THROW(covariance_matrix(Matrix::Ones(3, 1)), Error);
}

TEST(Covariance, ScalarOracleAndSymmetry) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Matrix w = oracle::random_matrix(rng, 2 + t % 9, 2 + t % 13);
    const Matrix c = covariance_matrix(w);
    EXPECT_LT((c - oracle::covariance(w)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(c, c.transpose());
  }
}

TEST(InnerProduct, Examples) {
  Matrix e = Matrix::Identity(2, 2);
  EXPECT_EQ(inner_product_matrix(e, reweight(e, Vector::Ones(2))), Matrix::Identity(2, 2));

  Matrix orth(3, 4);
  orth << 1, 1, 0, 0, 1, -1, 0, 0, 0, 0, 2, 3;
  Vector u(3);
  u << 0.2, 1.1, 1.7;
  const Matrix m = inner_product_matrix(orth, reweight(orth, u));
  EXPECT_DOUBLE_EQ(off_diagonal_abs_sum(m), 0.0);
  EXPECT_THROW(inner_product_matrix(orth, Matrix::Ones(3, 3)), Error);
}

TEST(InnerProduct, TripleLoopOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const Matrix f = oracle::random_matrix(rng, 4, 6);
    const Vector u = oracle::softplus_weights(oracle::random_vector(rng, 4));
    const Matrix w = reweight(f, u);
    EXPECT_LT((inner_product_matrix(f, w) - oracle::inner_products(f, w)).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(DecorrelationLoss, Examples) {
  CorrelationMatrices diag{Matrix::Identity(3, 3) * 2.0, Matrix(), DecorrMode::kCov};
  EXPECT_DOUBLE_EQ(decorrelation_loss(diag), 0.0);
  CorrelationMatrices ones{Matrix::Ones(2, 2), Matrix(), DecorrMode::kCov};
  EXPECT_DOUBLE_EQ(decorrelation_loss(ones), 2.0);
}

TEST(DecorrelationLoss, DoubleLoopOracleAllModes) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const Matrix f = oracle::random_matrix(rng, 5, 7);
    const Vector u = oracle::softplus_weights(oracle::random_vector(rng, 5));
    for (DecorrMode mode : {DecorrMode::kCov, DecorrMode::kInprod, DecorrMode::kBoth}) {
      for (bool sym : {false, true}) {
        const double got = decorrelation_loss(correlation_matrices(f, u, mode, sym));
        const double want = oracle::decorr_loss(f, u, mode_index(mode), sym);
        EXPECT_NEAR(got, want, 1e-10 * std::max(1.0, want));
        // The objective's precomputed Gram path agrees with the direct one.
        EXPECT_NEAR(DecorrObjective(f, mode, sym).loss(u), want, 1e-10 * std::max(1.0, want));
      }
    }
  }
}

TEST(DecorrelationLoss, PermutationInvariant) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const Matrix f = oracle::random_matrix(rng, 6, 5);
    const Vector u = oracle::softplus_weights(oracle::random_vector(rng, 6));
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + 6, rng);
    for (DecorrMode mode : {DecorrMode::kCov, DecorrMode::kInprod, DecorrMode::kBoth}) {
      const double a = decorrelation_loss(correlation_matrices(f, u, mode));
      const double b = decorrelation_loss(correlation_matrices(perm * f, perm * u, mode));
      EXPECT_NEAR(a, b, 1e-10 * std::max(1.0, a));
    }
  }
}

TEST(DecorrelationLoss, OrthogonalRowsHaveZeroInprodLoss) {
  const Matrix f = Matrix::Identity(4, 6) * 3.0;
  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    const Vector u = oracle::softplus_weights(oracle::random_vector(rng, 4));
    EXPECT_DOUBLE_EQ(decorrelation_loss(correlation_matrices(f, u, DecorrMode::kInprod)), 0.0);
  }
}

TEST(WeightState, SumAndPositivity) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const WeightState s(oracle::random_vector(rng, 1 + t % 40, 5.0));
    const Vector u = s.weights();
    EXPECT_TRUE(weights_satisfy_constraint(u));
    EXPECT_NEAR(u.sum(), static_cast<double>(u.size()), 1e-10);
    EXPECT_GT(u.minCoeff(), 0.0);
    EXPECT_LT((u - oracle::softplus_weights(s.raw())).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(WeightState::uniform(5).weights(), Vector::Ones(5));
  Vector w(3);
  w << 0.5, 1.0, 1.5;
  EXPECT_LT((WeightState::from_weights(w).weights() - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DecorrelationGrad, ZeroFeatures) {
  const WeightState s(Vector::LinSpaced(4, -1.0, 1.0));
  for (DecorrMode mode : {DecorrMode::kCov, DecorrMode::kInprod, DecorrMode::kBoth}) {
    EXPECT_EQ(decorrelation_grad(Matrix::Zero(4, 3), s, mode), Vector::Zero(4));
  }
}

// L = 2, D = 2, cov mode. With s_i = softplus(v_i), S = s_1 + s_2 and the
// centered rows giving c = Cov(o_1, o_2):
//   loss = 2 |c| u_1 u_2 = 8 |c| s_1 s_2 / S^2
//   dloss/dv_1 = 8 |c| sigmoid(v_1) s_2 (s_2 - s_1) / S^3   (and symmetric)
TEST(DecorrelationGrad, HandDerivedTwoByTwo) {
  Matrix f(2, 2);
  f << 1.0, 3.0, 2.0, 0.0;  // centered rows (-1, 1), (1, -1): c = -2
  const double v1 = 0.3, v2 = -0.8;
  const double s1 = std::log1p(std::exp(v1)), s2 = std::log1p(std::exp(v2)), S = s1 + s2;
  const double sig1 = 1.0 / (1.0 + std::exp(-v1)), sig2 = 1.0 / (1.0 + std::exp(-v2));
  const double c = 2.0;
  Vector v(2);
  v << v1, v2;
  const Vector g = decorrelation_grad(f, WeightState(v), DecorrMode::kCov);
  EXPECT_NEAR(g[0], 8.0 * c * sig1 * s2 * (s2 - s1) / (S * S * S), 1e-8);
  EXPECT_NEAR(g[1], 8.0 * c * sig2 * s1 * (s1 - s2) / (S * S * S), 1e-8);
}

TEST(DecorrelationGrad, FiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int c = 0; c < 20; ++c) {
    for (DecorrMode mode : {DecorrMode::kCov, DecorrMode::kInprod, DecorrMode::kBoth}) {
      for (bool sym : {false, true}) {
        EXPECT_LT(gradcheck::decorr_case(rng, mode, sym), 1e-4) << "case " << c;
      }
    }
  }
}

TEST(DecorrelationGrad, FiniteDifferencesWiderFeatures) {
  std::mt19937_64 rng(11);
  for (int c = 0; c < 20; ++c) {
    const int L = 2 + c % 15, D = 4 + c;
    const Matrix f = oracle::random_matrix(rng, L, D);
    const WeightState s(oracle::random_vector(rng, L, 0.5));
    for (DecorrMode mode : {DecorrMode::kCov, DecorrMode::kBoth}) {
      auto loss = [&](const Vector& v) {
        return decorrelation_loss(correlation_matrices(f, WeightState(v).weights(), mode));
      };
      EXPECT_LT(oracle::relative_error(decorrelation_grad(f, s, mode),
                                       oracle::numeric_grad(loss, s.raw())),
                1e-4);
    }
  }
}

TEST(OptimizeWeights, ZeroStepsIsNoOp) {
  std::mt19937_64 rng(12);
  const Matrix f = oracle::random_matrix(rng, 5, 6);
  const WeightState init(oracle::random_vector(rng, 5));
  DecorrOptions opts;
  opts.steps = 0;
  const DecorrResult r = optimize_weights(f, init, opts);
  EXPECT_EQ(r.state.raw(), init.raw());
  EXPECT_EQ(r.initial_loss, r.final_loss);
}

// Rows (a, a, b) with a orthogonal to b. On the symmetric family
// u = (x, x, 3 - 2x) the loss is 2 x^2 Cov(a, a), so a grid search finds
// its infimum at the small-x end.
TEST(OptimizeWeights, DownweightsDuplicatedRows) {
  Matrix f(3, 4);
  f << 1, -1, 0, 0, 1, -1, 0, 0, 0, 0, 1, -1;
  auto family = [&](double x) {
    Vector u(3);
    u << x, x, 3.0 - 2.0 * x;
    return oracle::decorr_loss(f, u, 0, false);
  };
  double grid_best = family(1.0), best_x = 1.0;
  for (int i = 1; i < 1500; ++i) {
    const double x = i * 1e-3;
    if (family(x) < grid_best) {
      grid_best = family(x);
      best_x = x;
    }
  }
  EXPECT_LT(best_x, 0.05);

  DecorrOptions opts;
  opts.steps = 200;
  opts.lr = 0.5;
  const DecorrResult r = optimize_weights(f, WeightState::uniform(3), opts);
  const Vector u = r.state.weights();
  EXPECT_LT(r.final_loss, family(1.0));
  EXPECT_LT(u[0], 1.0);
  EXPECT_NEAR(u[0], u[1], 1e-9);
  EXPECT_GE(r.final_loss, grid_best - 1e-12);
}

TEST(OptimizeWeights, MonotoneAndConstrained) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const Matrix f = apply_rff(build_rff_map(2, t), oracle::random_matrix(rng, 12, 6));
    DecorrOptions opts;
    opts.steps = 30;
    opts.lr = 5.0;  // large on purpose: forces halvings
    opts.mode = t % 2 ? DecorrMode::kBoth : DecorrMode::kCov;
    const DecorrResult r = optimize_weights(f, WeightState::uniform(12), opts);
    EXPECT_LE(r.final_loss, r.initial_loss);
    EXPECT_EQ(r.constraint_checks, 30);
    EXPECT_EQ(r.constraint_violations, 0);
    EXPECT_TRUE(weights_satisfy_constraint(r.state.weights()));
  }
}

TEST(OptimizeWeights, HalvesCorrelatedGaussianLoss) {
  double ratio_sum = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const Matrix f = oracle::correlated_gaussian(rng, 32, 64);
    DecorrOptions opts;
    opts.steps = 200;
    opts.lr = 0.5;
    const DecorrResult r = optimize_weights(f, WeightState::uniform(32), opts);
    ratio_sum += r.final_loss / r.initial_loss;
  }
  RecordProperty("mean_ratio", std::to_string(ratio_sum / 10.0));
  EXPECT_LE(ratio_sum / 10.0, 0.5);
}
