#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cimil/distill.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

using namespace cimil;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Bag make_bag(const Matrix& features, int label = 1) {
  Bag b;
  b.id = "b";
  b.features = features;
  b.bag_label = label;
  return b;
}

Dataset tiny_dataset(std::uint64_t seed, double sep, double confound) {
  SyntheticConfig c;
  c.n_bags_train = 40;
  c.n_bags_test = 10;
  c.k_min = 40;
  c.k_max = 60;
  c.n = 16;
  c.cluster_sep = sep;
  c.confound_strength = confound;
  c.seed = seed;
  return generate_synthetic(c);
}

}  // namespace

TEST(Predict, ZeroModelGivesOneHalf) {
  const DistillerModel model(5, 7);
  std::mt19937_64 rng(1);
  const Vector p = predict_instances(model, oracle::random_matrix(rng, 9, 5));
  for (double x : p) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(Predict, MonotoneInOutputBias) {
  DistillerModel model(3, 4);
  std::mt19937_64 rng(2);
  const Matrix f = oracle::random_matrix(rng, 4, 3);
  double previous = 0.0;
  for (double b : {0.0, 2.0, 4.0}) {
    model.b2() = b;
    const Vector p = predict_instances(model, f);
    EXPECT_GT(p.minCoeff(), previous);
    previous = p.maxCoeff();
  }
  EXPECT_NEAR(previous, 1.0 / (1.0 + std::exp(-4.0)), 1e-12);
}

TEST(Predict, HandComputedSingleHiddenUnit) {
  DistillerModel model(2, 1);
  model.w1() << 0.5, -1.0;
  model.b1() << 0.25;
  model.w2() << 2.0;
  model.b2() = -0.5;
  Matrix f(2, 2);
  f << 1.0, 0.2,   // 0.5 - 0.2 + 0.25 = 0.55 -> relu 0.55 -> 1.1 - 0.5 = 0.6
      -1.0, 1.0;   // -0.5 - 1 + 0.25 < 0 -> relu 0 -> -0.5
  const Vector p = predict_instances(model, f);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-0.6)), 1e-6);
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(0.5)), 1e-6);
}

TEST(Predict, DimensionMismatch) {
  const DistillerModel model(4, 3);
  try {
    predict_instances(model, Matrix::Zero(2, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(TopK, Examples) {
  EXPECT_EQ(select_top_k(vec({0.1, 0.9, 0.5, 0.7}), 2), (IndexVector{1, 3}));
  EXPECT_EQ(select_top_k(vec({0.5, 0.5, 0.5}), 2), (IndexVector{0, 1}));
}

TEST(TopK, TooLargeK) {
  try {
    select_top_k(vec({0.1, 0.2}), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "bag smaller than distillation scale");
  }
}

TEST(TopK, MatchesSortOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector p(1000);
  for (double& x : p) x = u(rng);
  EXPECT_EQ(select_top_k(p, 64), oracle::top_k(to_std(p), 64));
}

TEST(TopK, MatchesSortOracleWithHeavyTies) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    Vector p(40);
    for (double& x : p) x = 0.2 * level(rng);
    for (int k : {1, 7, 40}) EXPECT_EQ(select_top_k(p, k), oracle::top_k(to_std(p), k));
  }
}

TEST(TopK, PermutationEquivariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector p(50);
    for (double& x : p) x = u(rng);
    std::vector<int> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vector q(50);
    for (int i = 0; i < 50; ++i) q[i] = p[perm[i]];  // q_i = p_{perm(i)}
    IndexVector selected_q = select_top_k(q, 10);
    std::set<int> mapped;
    for (int i : selected_q) mapped.insert(perm[i]);
    const IndexVector selected_p = select_top_k(p, 10);
    EXPECT_EQ(mapped, std::set<int>(selected_p.begin(), selected_p.end()));
  }
}

TEST(Bipolar, Examples) {
  EXPECT_EQ(select_bipolar(vec({0.9, 0.1, 0.5, 0.8, 0.2}), 4), (IndexVector{0, 3, 1, 4}));
  EXPECT_EQ(select_bipolar(vec({0.5, 0.5, 0.5, 0.5}), 4), (IndexVector{0, 1, 3, 2}));
  EXPECT_EQ(select_bipolar(vec({0.9, 0.1}), 2), (IndexVector{0, 1}));
}

TEST(Bipolar, Errors) {
  EXPECT_THROW(select_bipolar(vec({0.1, 0.2, 0.3}), 3), Error);  // odd k
  EXPECT_THROW(select_bipolar(vec({0.1, 0.2}), 4), Error);       // K < k
}

TEST(Bipolar, MatchesSortOracleAndHalvesAreDisjoint) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector p(200);
    for (double& x : p) x = u(rng);
    const IndexVector got = select_bipolar(p, 32);
    EXPECT_EQ(got, oracle::bipolar(to_std(p), 32));
    const std::set<int> max_half(got.begin(), got.begin() + 16);
    const std::set<int> min_half(got.begin() + 16, got.end());
    for (int i : max_half) EXPECT_EQ(min_half.count(i), 0u);
    for (int i = 16; i + 1 < 32; ++i) EXPECT_LE(p[got[i]], p[got[i + 1]]);
  }
}

TEST(DistillationLoss, Examples) {
  EXPECT_LE(distillation_loss(vec({1 - 1e-9, 1 - 1e-9}), 1), 1e-6);
  EXPECT_NEAR(distillation_loss(vec({0.5, 0.5}), 1), 0.693147, 1e-6);
  EXPECT_NEAR(distillation_loss(vec({0.25}), 0), 0.287682, 1e-6);
  EXPECT_THROW(distillation_loss(Vector(0), 1), Error);
}

TEST(DistillationLoss, NonNegativeAndDecreasingForPositiveBags) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 0.98);
  for (int trial = 0; trial < 100; ++trial) {
    Vector p(5);
    for (double& x : p) x = u(rng);
    EXPECT_GE(distillation_loss(p, 0), 0.0);
    EXPECT_GE(distillation_loss(p, 1), 0.0);
    Vector q = p;
    q[trial % 5] += 0.01;
    EXPECT_LT(distillation_loss(q, 1), distillation_loss(p, 1));
  }
}

TEST(DistillationGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int c = 0; c < 20; ++c) EXPECT_LT(gradcheck::distiller_case(rng), 1e-4) << "case " << c;
}

TEST(EffectiveK, FallbackAndStrict) {
  EXPECT_EQ(effective_k(32, 100, true), 32);
  EXPECT_EQ(effective_k(32, 10, true), 10);
  EXPECT_THROW(effective_k(32, 10, false), Error);
}

TEST(TrainDistiller, ZeroLearningRateKeepsInitialParams) {
  const Dataset ds = tiny_dataset(1, 4.0, 0.0);
  DistillerTrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.0;
  cfg.hidden_dim = 16;
  cfg.k = 8;
  cfg.seed = 99;
  Rng rng(cfg.seed);
  const DistillerModel init = DistillerModel::random(ds.n, cfg.hidden_dim, rng);
  EXPECT_EQ(train_distiller(ds, cfg).model.params(), init.params());
}

TEST(TrainDistiller, DeterministicForSeed) {
  const Dataset ds = tiny_dataset(2, 4.0, 0.0);
  DistillerTrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_dim = 16;
  cfg.k = 8;
  cfg.seed = 5;
  const auto a = train_distiller(ds, cfg);
  const auto b = train_distiller(ds, cfg);
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.loss_history.size(), 3u);
}

TEST(TrainDistiller, LossHalvesOnSeparableData) {
  SyntheticConfig c;
  c.cluster_sep = 4.0;
  c.confound_strength = 0.0;
  c.seed = 3;
  const Dataset ds = generate_synthetic(c);
  DistillerTrainConfig cfg;  // 30 epochs, lr 1e-3, k 32
  cfg.seed = 21;
  const auto result = train_distiller(ds, cfg);
  ASSERT_EQ(result.loss_history.size(), 30u);
  RecordProperty("first", std::to_string(result.loss_history.front()));
  RecordProperty("last", std::to_string(result.loss_history.back()));
  EXPECT_LE(result.loss_history.back(), 0.5 * result.loss_history.front());
}

// With k no larger than the positives per bag, a pure top-k can be all positive.
TEST(TrainDistiller, LossFallsWellBelowHalfWhenTopKFitsPositives) {
  SyntheticConfig c;
  c.cluster_sep = 4.0;
  c.confound_strength = 0.0;
  c.seed = 3;
  const Dataset ds = generate_synthetic(c);
  DistillerTrainConfig cfg;
  cfg.k = 16;
  cfg.seed = 21;
  const auto result = train_distiller(ds, cfg);
  EXPECT_LE(result.loss_history.back(), 0.25 * result.loss_history.front());
}

TEST(DistillBag, KEqualsBagSizeSelectsAll) {
  std::mt19937_64 rng(9);
  Rng init(1);
  const DistillerModel model = DistillerModel::random(4, 6, init);
  const Bag bag = make_bag(oracle::random_matrix(rng, 3, 4));
  const DistilledSet s = distill_bag(model, bag, DistillMode::kTopK, 3);
  EXPECT_EQ(std::set<int>(s.indices.begin(), s.indices.end()), (std::set<int>{0, 1, 2}));
}

TEST(DistillBag, RowsAndProbsFollowIndices) {
  std::mt19937_64 rng(10);
  Rng init(2);
  const DistillerModel model = DistillerModel::random(5, 6, init);
  const Bag bag = make_bag(oracle::random_matrix(rng, 30, 5));
  const Vector all = predict_instances(model, bag);
  for (DistillMode mode : {DistillMode::kTopK, DistillMode::kBipolar}) {
    const DistilledSet s = distill_bag(model, bag, mode, 8);
    ASSERT_EQ(s.indices.size(), 8u);
    EXPECT_EQ(std::set<int>(s.indices.begin(), s.indices.end()).size(), 8u);
    for (int i = 0; i < 8; ++i) {
      EXPECT_EQ(s.features.row(i), bag.features.row(s.indices[i]));
      EXPECT_EQ(s.probs[i], all[s.indices[i]]);
    }
  }
}

TEST(DistillBag, SmallBagFallsBackToWholeBag) {
  std::mt19937_64 rng(11);
  Rng init(3);
  const DistillerModel model = DistillerModel::random(4, 6, init);
  const Bag bag = make_bag(oracle::random_matrix(rng, 5, 4));
  EXPECT_EQ(distill_bag(model, bag, DistillMode::kTopK, 16).indices.size(), 5u);
  EXPECT_EQ(distill_bag(model, bag, DistillMode::kBipolar, 16).indices.size(), 4u);
  EXPECT_THROW(distill_bag(model, bag, DistillMode::kTopK, 16, false), Error);
}

// Oracle scorer: the log likelihood ratio of the positive cluster is
// monotone in the projection onto the cluster mean, which a one-unit
// ReLU model reproduces exactly.
TEST(DistillBag, PerfectScorerSelectsOnlyPositives) {
  SyntheticConfig c;
  c.n_bags_train = 10;
  c.n_bags_test = 0;
  c.k_min = c.k_max = 100;
  c.pos_fraction = 0.2;
  c.cluster_sep = 8.0;
  c.confound_strength = 0.0;
  c.seed = 4;
  const Dataset ds = generate_synthetic(c);
  DistillerModel oracle_model(c.n, 1);
  oracle_model.w1().setZero();
  oracle_model.w1().leftCols(c.signal_dims).setOnes();
  oracle_model.b1() << 50.0;  // keep the unit in its linear regime
  oracle_model.w2() << 1.0;
  oracle_model.b2() = -50.0;
  for (const Bag* bag : ds.split(Split::kTrain)) {
    if (bag->bag_label != 1) continue;
    for (int i : distill_bag(oracle_model, *bag, DistillMode::kTopK, 16).indices) {
      EXPECT_EQ((*bag->latent_labels)[i], 1) << bag->id;
    }
  }
}
