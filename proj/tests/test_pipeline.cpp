#include <fstream>

#include <gtest/gtest.h>

#include "cimil/experiments.hpp"
#include "cimil/pipeline.hpp"
#include "temp_dir.hpp"

using namespace cimil;
using nlohmann::json;

namespace {

RunConfig tiny_config(std::uint64_t seed = 3) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.synth.n_bags_train = 16;
  cfg.synth.n_bags_test = 8;
  cfg.synth.k_min = 20;
  cfg.synth.k_max = 30;
  cfg.synth.n = 8;
  cfg.synth.pos_fraction = 0.2;
  cfg.k = 8;
  cfg.epochs_stage1 = 3;
  cfg.epochs_stage2 = 3;
  cfg.hidden_stage1 = 16;
  cfg.agg_d_a = 8;
  cfg.agg_d_mlp = 8;
  cfg.bank_t = 3;
  return cfg;
}

struct Trained {
  Dataset data;
  RunConfig cfg;
  TrainResult result;
};

Trained train_tiny(RunConfig cfg) {
  Dataset data = materialize_dataset(cfg);
  cfg = resolve(cfg, data);
  TrainResult result = train_full(cfg, data);
  return {std::move(data), cfg, std::move(result)};
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  RunConfig cfg = tiny_config();
  cfg.mode = DistillMode::kBipolar;
  cfg.decorr.mode = DecorrMode::kBoth;
  cfg.bank_rule = BankUpdateRule::kDrawnSlot;
  cfg.rff_seed = 77;
  const json j = to_json(cfg);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  for (const char* text : {R"({"bogus": 1})", R"({"decorr": {"stepz": 3}})",
                           R"({"k": "big"})", R"({"mode": "sideways"})",
                           R"({"bank": {"update_rule": "some"}})", R"({"synth": {"pos_fraction": 0}})",
                           R"({"rff": {"m": 0}})"}) {
    try {
      RunConfig cfg = run_config_from_json(json::parse(text));
      cfg.validate();
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(exit_code_for(e.code()), 2) << text;
    }
  }
}

TEST(Config, MergePrecedence) {
  json base = to_json(RunConfig{});
  merge_json(base, json::parse(R"({"decorr": {"steps": 7}, "seed": 4})"));
  merge_json(base, json::parse(R"({"decorr": {"lr": 0.2}, "seed": 9})"));
  const RunConfig cfg = run_config_from_json(base);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.decorr.steps, 7);
  EXPECT_EQ(cfg.decorr.lr, 0.2);
  EXPECT_EQ(cfg.decorr.mode, DecorrMode::kCov);
}

TEST(Config, ResolveFillsDataDependentDefaults) {
  RunConfig cfg = tiny_config();
  cfg.k = 0;
  Dataset small = materialize_dataset(cfg);
  const RunConfig r = resolve(cfg, small);
  EXPECT_EQ(r.k, 32);
  EXPECT_EQ(r.mode, DistillMode::kTopK);
  EXPECT_TRUE(r.rff_seed.has_value());
  EXPECT_TRUE(r.resolved());

  RunConfig large = tiny_config();
  large.k = 0;
  large.synth.n_bags_train = 2;
  large.synth.n_bags_test = 1;
  large.synth.k_min = large.synth.k_max = 1000;
  EXPECT_EQ(resolve(large, materialize_dataset(large)).k, 64);

  Dataset subtype = small;
  subtype.task_mode = TaskMode::kSubtype;
  EXPECT_EQ(resolve(cfg, subtype).mode, DistillMode::kBipolar);
}

TEST(Config, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorCode::kInvalidConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::kMissingFile), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::kDimensionMismatch), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::kNumericFailure), 4);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, "data"), derive_seed(1, "rff"));
  EXPECT_NE(derive_seed(1, "data"), derive_seed(2, "data"));
  EXPECT_EQ(derive_seed(5, "bank"), derive_seed(5, "bank"));
}

TEST(TensorFile, RoundTripAndCorruption) {
  TensorFile f("demo");
  f.meta() = {{"x", 1}};
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6.5;
  f.put("m", m);
  f.put("v", Vector(Vector::LinSpaced(4, 0.0, 3.0)));
  const std::string bytes = f.serialize();
  const TensorFile g = TensorFile::deserialize(bytes);
  EXPECT_EQ(g.kind(), "demo");
  EXPECT_EQ(g.meta()["x"], 1);
  EXPECT_EQ(g.matrix("m"), m);
  EXPECT_EQ(g.vector("v"), Vector::LinSpaced(4, 0.0, 3.0));
  EXPECT_EQ(g.serialize(), bytes);
  EXPECT_THROW(TensorFile::deserialize(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(TensorFile::deserialize("NOTMAGIC" + bytes.substr(8)), Error);
  EXPECT_THROW(g.matrix("missing"), Error);
}

TEST(Pipeline, ZeroStage2EpochsKeepsInitialization) {
  RunConfig cfg = tiny_config();
  cfg.epochs_stage2 = 0;
  const Trained t = train_tiny(cfg);
  Rng init(derive_seed(t.cfg.seed, "aggregator"));
  AggregatorModel expected = AggregatorModel::random(
      t.cfg.agg_variant, t.result.bundle.feature_dim, t.cfg.agg_d_a, t.cfg.agg_d_mlp, init);
  round_to_float(expected.params());
  EXPECT_EQ(t.result.bundle.aggregator.params(), expected.params());
  ASSERT_EQ(t.result.bundle.banks.size(), 1u);
  EXPECT_TRUE(t.result.bundle.banks[0].empty());
  EXPECT_TRUE(t.result.bundle.banks[0].frozen());
}

TEST(Pipeline, WarmupFillsBanks) {
  RunConfig cfg = tiny_config();
  cfg.epochs_stage2 = 0;
  cfg.bank_warmup = true;
  const Trained t = train_tiny(cfg);
  EXPECT_EQ(t.result.bundle.banks[0].fill_count(), 3);
}

TEST(Pipeline, BundleBytesAndReportsAreDeterministic) {
  const Trained a = train_tiny(tiny_config());
  const Trained b = train_tiny(tiny_config());
  EXPECT_EQ(a.result.bundle.serialize(), b.result.bundle.serialize());
  EXPECT_EQ(to_json(evaluate(a.result.bundle, a.data)), to_json(evaluate(b.result.bundle, b.data)));
  const Trained c = train_tiny(tiny_config(4));
  EXPECT_NE(a.result.bundle.serialize(), c.result.bundle.serialize());
}

TEST(Pipeline, SaveLoadPreservesBehaviour) {
  TempDir tmp;
  const Trained t = train_tiny(tiny_config());
  t.result.bundle.save(tmp.path() / "b.cimil");
  const ModelBundle back = ModelBundle::load(tmp.path() / "b.cimil");
  EXPECT_EQ(back.serialize(), t.result.bundle.serialize());
  EXPECT_EQ(back.aggregator.params(), t.result.bundle.aggregator.params());
  EXPECT_TRUE(back.banks[0] == t.result.bundle.banks[0]);
  EXPECT_EQ(to_json(evaluate(back, t.data)), to_json(evaluate(t.result.bundle, t.data)));
}

TEST(Pipeline, ConstraintHoldsThroughoutTraining) {
  const Trained t = train_tiny(tiny_config());
  EXPECT_GT(t.result.stats.constraint_checks, 0);
  EXPECT_EQ(t.result.stats.constraint_violations, 0);
}

TEST(Pipeline, AblationConditionsTrain) {
  for (bool s1 : {false, true}) {
    for (bool s2 : {false, true}) {
      RunConfig cfg = tiny_config();
      cfg.stage1 = s1;
      cfg.stage2 = s2;
      const Trained t = train_tiny(cfg);
      EXPECT_EQ(t.result.bundle.distiller.has_value(), s1);
      EXPECT_EQ(t.result.bundle.banks.empty(), !s2);
      EXPECT_EQ(t.result.bundle.feature_dim, t.data.n);
      const EvalReport r = evaluate(t.result.bundle, t.data);
      EXPECT_EQ(r.n_test, 8);
    }
  }
}

TEST(Pipeline, BipolarKeepsTwoBanks) {
  RunConfig cfg = tiny_config();
  cfg.mode = DistillMode::kBipolar;
  const Trained t = train_tiny(cfg);
  ASSERT_EQ(t.result.bundle.banks.size(), 2u);
  EXPECT_EQ(t.result.bundle.banks[0].rows(), 4);
  EXPECT_EQ(t.result.bundle.banks[1].fill_count(), 3);
  EXPECT_EQ(evaluate(t.result.bundle, t.data).per_bag[0].distilled_indices.size(), 8u);
}

TEST(Pipeline, MultiSampleRff) {
  RunConfig cfg = tiny_config();
  cfg.rff_m = 3;
  const Trained t = train_tiny(cfg);
  EXPECT_EQ(t.result.bundle.feature_dim, 3 * t.data.n);
  EXPECT_EQ(t.result.bundle.banks[0].cols(), 3 * t.data.n);
}

TEST(Pipeline, DimensionMismatchOnEval) {
  const Trained t = train_tiny(tiny_config());
  RunConfig other = tiny_config();
  other.synth.n = 5;
  const Dataset wrong = materialize_dataset(other);
  try {
    evaluate(t.result.bundle, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(Pipeline, Stage2LossHalvesWithoutConfound) {
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.synth.cluster_sep = 4.0;
    cfg.synth.confound_strength = 0.0;
    const Trained t = train_tiny(cfg);
    const auto& loss = t.result.stats.stage2_loss;
    ASSERT_EQ(loss.size(), 30u);
    RecordProperty("seed" + std::to_string(seed),
                   std::to_string(loss.front()) + " -> " + std::to_string(loss.back()));
    EXPECT_LE(loss.back(), 0.5 * loss.front())
        << "seed " << seed << ", rff omega=" << t.result.bundle.rff.omega.transpose();
  }
}

TEST(CorrelationReport, UniformArmsGiveUnitRatio) {
  const Trained t = train_tiny(tiny_config());
  DecorrOptions opts;
  opts.steps = 0;
  const CorrelationReport r = correlation_report(t.result.bundle, t.data, 10, opts);
  EXPECT_DOUBLE_EQ(r.train.reduction_ratio, 1.0);
  EXPECT_DOUBLE_EQ(r.test.reduction_ratio, 1.0);
}

TEST(CorrelationReport, SingleInstanceBatchHasNoOffDiagonal) {
  const Trained t = train_tiny(tiny_config());
  DecorrOptions opts;
  opts.steps = 10;
  opts.mode = DecorrMode::kBoth;
  for (const CorrelationBagRow& row : correlation_report(t.result.bundle, t.data, 1, opts).per_bag) {
    EXPECT_EQ(row.before, 0.0);
    EXPECT_EQ(row.after, 0.0);
  }
}

TEST(CorrelationReport, ReweightingReducesCorrelation) {
  const Trained t = train_tiny(tiny_config());
  DecorrOptions opts;
  opts.steps = 200;
  opts.lr = 0.5;
  const CorrelationReport r = correlation_report(t.result.bundle, t.data, 16, opts);
  EXPECT_LT(r.train.mean_after, r.train.mean_before);
  EXPECT_LT(r.test.mean_after, r.test.mean_before);
}

TEST(Experiments, AblationSchema) {
  const AblationResult r = run_ablation(tiny_config(), {5});
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.cells.size(), 4u);
  std::ostringstream csv;
  write_ablation_csv(r, csv);
  std::istringstream lines(csv.str());
  std::string header, line;
  std::getline(lines, header);
  EXPECT_EQ(header, "stage1,stage2,acc_mean,acc_std,auc_mean,auc_std,n_seeds,config_hash");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1).size(), 16u);  // hash column
  }
  EXPECT_EQ(rows, 4);
}

TEST(Experiments, KSweepRecordsErrorsAndContinues) {
  RunConfig cfg = tiny_config();
  cfg.allow_small_bags = false;
  const auto rows = run_ksweep(cfg, {8, 500}, {5});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].ok);
  EXPECT_FALSE(rows[1].ok);
  EXPECT_NE(rows[1].error.find("bag smaller than distillation scale"), std::string::npos);
  EXPECT_EQ(run_ksweep(tiny_config(), {8}, {5}).size(), 1u);
}
