#include "cimil/pipeline.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cimil/optim.hpp"

namespace cimil {

using nlohmann::json;

namespace {

struct Group {
  int start = 0;
  int rows = 0;
};

bool bipolar_groups(const RunConfig& cfg) {
  return cfg.stage1 && cfg.mode == DistillMode::kBipolar;
}

/// Decorrelation groups: the two halves of a bipolar selection are
/// reweighted separately, everything else is one group.
std::vector<Group> groups_for(const RunConfig& cfg, int rows) {
  if (bipolar_groups(cfg) && rows >= 2) return {{0, rows / 2}, {rows / 2, rows - rows / 2}};
  return {{0, rows}};
}

int bank_rows(const RunConfig& cfg) {
  return bipolar_groups(cfg) ? cfg.k / 2 : cfg.k;
}

std::vector<MemoryBank> make_banks(const RunConfig& cfg, int feature_dim) {
  const int count = bipolar_groups(cfg) ? 2 : 1;
  return std::vector<MemoryBank>(count,
                                 MemoryBank(cfg.bank_t, bank_rows(cfg), feature_dim, cfg.bank_rule));
}

RffMap make_rff_map(const RunConfig& cfg) {
  RffMap map = build_rff_map(cfg.rff_m, *cfg.rff_seed);
  round_to_float(map.omega);
  round_to_float(map.phi);
  // Rounding may land a phase on 2*pi itself.
  for (Eigen::Index j = 0; j < map.phi.size(); ++j) {
    if (map.phi[j] >= 2.0 * std::numbers::pi) {
      map.phi[j] = static_cast<double>(
          std::nextafter(static_cast<float>(2.0 * std::numbers::pi), 0.0f));
      if (map.phi[j] >= 2.0 * std::numbers::pi) map.phi[j] = 0.0;
    }
  }
  return map;
}

/// Instance rows forwarded to stage 2: the distilled set when stage 1 is
/// on, every instance otherwise.
Matrix stage1_rows(const RunConfig& cfg, const DistillerModel* distiller, const Bag& bag,
                   BagScore* score) {
  if (!cfg.stage1) return bag.features;
  DistilledSet ds = distill_bag(*distiller, bag, *cfg.mode, cfg.k, cfg.allow_small_bags);
  if (score) {
    score->distilled_indices = ds.indices;
    score->distilled_probs = ds.probs;
  }
  return std::move(ds.features);
}

void add_stats(TrainStats* stats, const DecorrResult& result) {
  if (!stats) return;
  stats->constraint_checks += result.constraint_checks;
  stats->constraint_violations += result.constraint_violations;
  stats->halvings += result.halvings;
}

/// Reweights RFF rows group by group against draws from `banks`. When
/// `update_target` is given (training), each group's bank is updated with
/// the optimized weights before reweighting.
Matrix decorrelate(const RunConfig& cfg, const Matrix& rff_rows,
                   const std::vector<MemoryBank>& banks, std::vector<MemoryBank>* update_target,
                   Rng& rng, TrainStats* stats) {
  const std::vector<Group> groups = groups_for(cfg, static_cast<int>(rff_rows.rows()));
  Matrix out(rff_rows.rows(), rff_rows.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Group& group = groups[g];
    const Matrix batch = rff_rows.middleRows(group.start, group.rows);
    const MemoryBank& bank = banks.at(g);
    const MemoryBank::Draw draw = bank.draw_and_concat(batch, Vector::Ones(group.rows), rng);
    const DecorrResult result =
        optimize_weights(draw.features, WeightState::from_weights(draw.weights), cfg.decorr);
    add_stats(stats, result);
    const Vector weights = result.state.weights();
    if (update_target && group.rows >= bank.rows()) {
      (*update_target)[g].update(draw.features, weights, draw.index);
    }
    out.middleRows(group.start, group.rows) = reweight(batch, weights.head(group.rows));
  }
  return out;
}

Rng bag_rng(std::uint64_t seed, const char* stream, const std::string& bag_id) {
  return Rng(derive_seed(derive_seed(seed, stream), bag_id));
}

void require_resolved(const RunConfig& cfg) {
  if (!cfg.resolved()) {
    throw Error(ErrorCode::kInvalidConfig, "run config must be resolved before training");
  }
}

}  // namespace

void save_distiller(const DistillerModel& model, const std::filesystem::path& path) {
  TensorFile file("distiller");
  file.meta() = {{"input_dim", model.input_dim()}, {"hidden_dim", model.hidden_dim()}};
  file.put("distiller.w1", Matrix(model.w1()));
  file.put("distiller.b1", Vector(model.b1()));
  file.put("distiller.w2", Vector(model.w2()));
  file.put("distiller.b2", Vector(Vector::Constant(1, model.b2())));
  file.save(path);
}

namespace {

DistillerModel distiller_from(const TensorFile& file, const json& dims) {
  DistillerModel model(dims.at("input_dim").get<int>(), dims.at("hidden_dim").get<int>());
  const Matrix w1 = file.matrix("distiller.w1");
  if (w1.rows() != model.hidden_dim() || w1.cols() != model.input_dim()) {
    throw Error(ErrorCode::kBadFormat, "distiller.w1 has the wrong shape");
  }
  model.w1() = w1;
  model.b1() = file.vector("distiller.b1");
  model.w2() = file.vector("distiller.w2");
  model.b2() = file.vector("distiller.b2")[0];
  return model;
}

}  // namespace

DistillerModel load_distiller(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path);
  if (file.kind() != "distiller") throw Error(ErrorCode::kBadFormat, "not a distiller checkpoint");
  return distiller_from(file, file.meta());
}

TensorFile ModelBundle::to_tensor_file() const {
  TensorFile file("model_bundle");
  json meta;
  meta["config"] = to_json(config);
  meta["input_dim"] = input_dim;
  meta["feature_dim"] = feature_dim;
  if (distiller) {
    meta["distiller"] = {{"input_dim", distiller->input_dim()},
                         {"hidden_dim", distiller->hidden_dim()}};
    file.put("distiller.w1", Matrix(distiller->w1()));
    file.put("distiller.b1", Vector(distiller->b1()));
    file.put("distiller.w2", Vector(distiller->w2()));
    file.put("distiller.b2", Vector(Vector::Constant(1, distiller->b2())));
  } else {
    meta["distiller"] = nullptr;
  }
  meta["aggregator"] = {{"variant", to_string(aggregator.variant())},
                        {"input_dim", aggregator.input_dim()},
                        {"d_a", aggregator.attention_dim()},
                        {"d_mlp", aggregator.mlp_dim()}};
  if (aggregator.has_attention()) {
    file.put("aggregator.attn_v", Matrix(aggregator.attn_v()));
    file.put("aggregator.attn_bv", Vector(aggregator.attn_bv()));
    file.put("aggregator.attn_u", Matrix(aggregator.attn_u()));
    file.put("aggregator.attn_bu", Vector(aggregator.attn_bu()));
    file.put("aggregator.attn_w", Vector(aggregator.attn_w()));
  }
  file.put("aggregator.mlp_w1", Matrix(aggregator.mlp_w1()));
  file.put("aggregator.mlp_b1", Vector(aggregator.mlp_b1()));
  file.put("aggregator.mlp_w2", Vector(aggregator.mlp_w2()));
  file.put("aggregator.mlp_b2", Vector(Vector::Constant(1, aggregator.mlp_b2())));

  meta["rff"] = {{"seed", rff.seed}, {"m", rff.samples()}};
  file.put("rff.omega", rff.omega);
  file.put("rff.phi", rff.phi);

  meta["banks"] = json::array();
  for (std::size_t g = 0; g < banks.size(); ++g) {
    const MemoryBank& bank = banks[g];
    meta["banks"].push_back({{"capacity", bank.capacity()},
                             {"rows", bank.rows()},
                             {"cols", bank.cols()},
                             {"fill_count", bank.fill_count()},
                             {"frozen", bank.frozen()},
                             {"update_rule", to_string(bank.rule())}});
    for (int i = 0; i < bank.fill_count(); ++i) {
      const std::string prefix = "bank" + std::to_string(g) + ".slot" + std::to_string(i);
      file.put(prefix + ".features", bank.slot_features(i));
      file.put(prefix + ".weights", bank.slot_weights(i));
    }
  }
  file.meta() = std::move(meta);
  return file;
}

ModelBundle ModelBundle::from_tensor_file(const TensorFile& file) {
  if (file.kind() != "model_bundle") throw Error(ErrorCode::kBadFormat, "not a model bundle");
  const json& meta = file.meta();
  ModelBundle b;
  try {
    b.config = run_config_from_json(meta.at("config"));
    b.input_dim = meta.at("input_dim").get<int>();
    b.feature_dim = meta.at("feature_dim").get<int>();
    if (!meta.at("distiller").is_null()) b.distiller = distiller_from(file, meta.at("distiller"));

    const json& agg = meta.at("aggregator");
    b.aggregator = AggregatorModel(parse_aggregator_variant(agg.at("variant").get<std::string>()),
                                   agg.at("input_dim").get<int>(), agg.at("d_a").get<int>(),
                                   agg.at("d_mlp").get<int>());
    AggregatorModel& a = b.aggregator;
    if (a.has_attention()) {
      a.attn_v() = file.matrix("aggregator.attn_v");
      a.attn_bv() = file.vector("aggregator.attn_bv");
      a.attn_u() = file.matrix("aggregator.attn_u");
      a.attn_bu() = file.vector("aggregator.attn_bu");
      a.attn_w() = file.vector("aggregator.attn_w");
    }
    a.mlp_w1() = file.matrix("aggregator.mlp_w1");
    a.mlp_b1() = file.vector("aggregator.mlp_b1");
    a.mlp_w2() = file.vector("aggregator.mlp_w2");
    a.mlp_b2() = file.vector("aggregator.mlp_b2")[0];

    b.rff.seed = meta.at("rff").at("seed").get<std::uint64_t>();
    b.rff.omega = file.vector("rff.omega");
    b.rff.phi = file.vector("rff.phi");

    for (std::size_t g = 0; g < meta.at("banks").size(); ++g) {
      const json& bm = meta.at("banks")[g];
      MemoryBank bank(bm.at("capacity").get<int>(), bm.at("rows").get<int>(),
                      bm.at("cols").get<int>(),
                      parse_bank_update_rule(bm.at("update_rule").get<std::string>()));
      const int fill = bm.at("fill_count").get<int>();
      std::vector<Matrix> features(bank.capacity(), Matrix::Zero(bank.rows(), bank.cols()));
      std::vector<Vector> weights(bank.capacity(), Vector::Zero(bank.rows()));
      for (int i = 0; i < fill; ++i) {
        const std::string prefix = "bank" + std::to_string(g) + ".slot" + std::to_string(i);
        features[i] = file.matrix(prefix + ".features");
        weights[i] = file.vector(prefix + ".weights");
      }
      bank.restore(std::move(features), std::move(weights), fill, bm.at("frozen").get<bool>());
      b.banks.push_back(std::move(bank));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadFormat, std::string("bad model bundle header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::kBadFormat, std::string("bad model bundle: ") + e.what());
  }
  return b;
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  return from_tensor_file(TensorFile::load(path));
}

DistillerTrainResult train_stage1(const RunConfig& cfg, const Dataset& dataset) {
  require_resolved(cfg);
  DistillerTrainConfig dc;
  dc.epochs = cfg.epochs_stage1;
  dc.lr = cfg.lr_stage1;
  dc.momentum = cfg.momentum_stage1;
  dc.hidden_dim = cfg.hidden_stage1;
  dc.k = cfg.k;
  dc.allow_small_bags = cfg.allow_small_bags;
  dc.seed = derive_seed(cfg.seed, "distiller");
  DistillerTrainResult result = train_distiller(dataset, dc);
  round_to_float(result.model.params());
  return result;
}

TrainResult train_pipeline(const Dataset& dataset, const DistillerModel* distiller,
                           const RunConfig& cfg) {
  require_resolved(cfg);
  if (cfg.stage1 && !distiller) {
    throw Error(ErrorCode::kInvalidArgument, "stage 1 is enabled but no distiller was given");
  }
  const auto train = dataset.split(Split::kTrain);
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "train split is empty");

  TrainResult result;
  ModelBundle& bundle = result.bundle;
  bundle.config = cfg;
  bundle.config.out.clear();  // run location is not part of the model
  bundle.input_dim = dataset.n;
  bundle.feature_dim = cfg.stage2 ? dataset.n * cfg.rff_m : dataset.n;
  if (cfg.stage1) bundle.distiller = *distiller;
  bundle.rff = make_rff_map(cfg);
  if (cfg.stage2) bundle.banks = make_banks(cfg, bundle.feature_dim);

  Rng init_rng(derive_seed(cfg.seed, "aggregator"));
  bundle.aggregator = AggregatorModel::random(cfg.agg_variant, bundle.feature_dim, cfg.agg_d_a,
                                              cfg.agg_d_mlp, init_rng);

  // The distiller and RFF map are frozen, so each bag's stage-2 input
  // rows are computed once.
  std::vector<Matrix> rows;
  rows.reserve(train.size());
  for (const Bag* bag : train) {
    Matrix r = stage1_rows(cfg, bundle.distiller ? &*bundle.distiller : nullptr, *bag, nullptr);
    rows.push_back(cfg.stage2 ? apply_rff(bundle.rff, r) : std::move(r));
  }

  Rng bank_rng(derive_seed(cfg.seed, "bank"));
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  TrainStats* stats = &result.stats;

  if (cfg.stage2 && cfg.bank_warmup) {
    for (const Matrix& r : rows) decorrelate(cfg, r, bundle.banks, &bundle.banks, bank_rng, stats);
  }

  MomentumSgd opt(bundle.aggregator.params().size(), cfg.lr_stage2, cfg.momentum_stage2);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (int i : order) {
      const Bag& bag = *train[i];
      const Matrix features =
          cfg.stage2 ? decorrelate(cfg, rows[i], bundle.banks, &bundle.banks, bank_rng, stats)
                     : rows[i];
      AggregatorLossGrad lg = aggregator_loss_and_grad(bundle.aggregator, features, bag.bag_label);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite bag loss at stage-2 epoch " << epoch + 1 << ", bag '" << bag.id
            << "' (loss=" << lg.loss << ")";
        throw Error(ErrorCode::kNumericFailure, msg.str());
      }
      epoch_loss += lg.loss;
      opt.step(bundle.aggregator.params(), lg.grad);
    }
    result.stats.stage2_loss.push_back(epoch_loss / static_cast<double>(train.size()));
  }

  round_to_float(bundle.aggregator.params());
  for (MemoryBank& bank : bundle.banks) {
    bank.round_to_float();
    bank.freeze();
  }
  return result;
}

TrainResult train_full(const RunConfig& cfg, const Dataset& dataset) {
  require_resolved(cfg);
  if (!cfg.stage1) return train_pipeline(dataset, nullptr, cfg);
  DistillerTrainResult stage1 = train_stage1(cfg, dataset);
  TrainResult result = train_pipeline(dataset, &stage1.model, cfg);
  result.stats.stage1_loss = std::move(stage1.loss_history);
  return result;
}

void check_compatible(const ModelBundle& bundle, const Dataset& dataset) {
  if (bundle.input_dim != dataset.n) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dimension mismatch: bundle expects n=" + std::to_string(bundle.input_dim) +
                    ", dataset has n=" + std::to_string(dataset.n));
  }
}

BagScore score_bag(const ModelBundle& bundle, const Bag& bag) {
  const RunConfig& cfg = bundle.config;
  if (bag.dim() != bundle.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "dimension mismatch: bag '" + bag.id + "'");
  }
  BagScore out;
  Matrix rows = stage1_rows(cfg, bundle.distiller ? &*bundle.distiller : nullptr, bag, &out);
  if (cfg.stage2) {
    Rng rng = bag_rng(cfg.seed, "eval", bag.id);
    rows = decorrelate(cfg, apply_rff(bundle.rff, rows), bundle.banks, nullptr, rng, nullptr);
  }
  out.score = classify(bundle.aggregator, attention_fuse(bundle.aggregator, rows).fused);
  return out;
}

EvalReport evaluate(const ModelBundle& bundle, const Dataset& dataset, Split split) {
  check_compatible(bundle, dataset);
  std::vector<BagResult> results;
  for (const Bag* bag : dataset.split(split)) {
    BagScore s = score_bag(bundle, *bag);
    results.push_back({bag->id, bag->bag_label, s.score, std::move(s.distilled_indices)});
  }
  return make_eval_report(std::move(results));
}

CorrelationReport correlation_report(const ModelBundle& bundle, const Dataset& dataset,
                                     int batch_size, const DecorrOptions& opts) {
  check_compatible(bundle, dataset);
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  CorrelationReport report;
  for (const Bag& bag : dataset.bags) {
    Rng rng = bag_rng(bundle.config.seed, "correlation", bag.id);
    std::vector<int> order(bag.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int take = std::min(batch_size, bag.size());
    Matrix batch(take, bag.dim());
    for (int i = 0; i < take; ++i) batch.row(i) = bag.features.row(order[i]);
    const Matrix mapped = apply_rff(bundle.rff, batch);

    const Vector uniform = Vector::Ones(take);
    const double before = decorrelation_loss(
        correlation_matrices(mapped, uniform, opts.mode, opts.inprod_symmetric));
    const DecorrResult result = optimize_weights(mapped, WeightState::uniform(take), opts);
    const double after = decorrelation_loss(
        correlation_matrices(mapped, result.state.weights(), opts.mode, opts.inprod_symmetric));
    report.per_bag.push_back({bag.id, bag.split, before, after});
  }
  summarize_correlation(report);
  return report;
}

std::vector<DistilledSet> distill_all(const ModelBundle& bundle, const Dataset& dataset) {
  check_compatible(bundle, dataset);
  if (!bundle.distiller) {
    throw Error(ErrorCode::kInvalidArgument, "bundle has no distiller (stage 1 disabled)");
  }
  std::vector<DistilledSet> out;
  for (const Bag& bag : dataset.bags) {
    out.push_back(distill_bag(*bundle.distiller, bag, *bundle.config.mode, bundle.config.k,
                              bundle.config.allow_small_bags));
  }
  return out;
}

json to_json(const EvalReport& report) {
  json per_bag = json::array();
  for (const BagResult& r : report.per_bag) {
    per_bag.push_back({{"id", r.id},
                       {"label", r.label},
                       {"score", r.score},
                       {"distilled_indices", r.distilled_indices}});
  }
  return {{"acc", report.acc},
          {"auc", report.auc_defined ? json(report.auc) : json(nullptr)},
          {"recall", report.recall},
          {"precision", report.precision},
          {"n_test", report.n_test},
          {"per_bag", per_bag}};
}

json to_json(const CorrelationReport& report) {
  auto summary = [](const CorrelationSplitSummary& s) {
    return json{{"mean_before", s.mean_before},
                {"mean_after", s.mean_after},
                {"reduction_ratio", s.reduction_ratio},
                {"n_bags", s.n_bags}};
  };
  return {{"train", summary(report.train)}, {"test", summary(report.test)}};
}

}  // namespace cimil
