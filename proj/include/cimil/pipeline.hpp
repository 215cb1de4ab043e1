#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cimil/aggregate.hpp"
#include "cimil/config.hpp"
#include "cimil/dataset.hpp"
#include "cimil/distill.hpp"
#include "cimil/eval_metrics.hpp"
#include "cimil/memory_bank.hpp"
#include "cimil/rff_decorr.hpp"
#include "cimil/tensor_file.hpp"

namespace cimil {

/// Everything needed to score a bag: the resolved config, the frozen
/// distiller (absent when stage 1 is off), the aggregator head, the RFF
/// map and the frozen memory banks (one per decorrelation group).
struct ModelBundle {
  RunConfig config;
  int input_dim = 0;    // n
  int feature_dim = 0;  // aggregator input: n * m with stage 2, n without
  std::optional<DistillerModel> distiller;
  AggregatorModel aggregator;
  RffMap rff;
  std::vector<MemoryBank> banks;

  TensorFile to_tensor_file() const;
  static ModelBundle from_tensor_file(const TensorFile& file);
  std::string serialize() const { return to_tensor_file().serialize(); }
  void save(const std::filesystem::path& path) const { to_tensor_file().save(path); }
  static ModelBundle load(const std::filesystem::path& path);
};

struct TrainStats {
  std::vector<double> stage1_loss;  // mean loss per epoch
  std::vector<double> stage2_loss;
  long constraint_checks = 0;
  long constraint_violations = 0;
  long halvings = 0;
};

struct TrainResult {
  ModelBundle bundle;
  TrainStats stats;
};

void save_distiller(const DistillerModel& model, const std::filesystem::path& path);
DistillerModel load_distiller(const std::filesystem::path& path);

/// Stage 1 for a resolved config; returns a model snapped to f32.
DistillerTrainResult train_stage1(const RunConfig& cfg, const Dataset& dataset);

/// Stage 2 over a frozen distiller (ignored when cfg.stage1 is off).
/// Per train bag and epoch: distill, map to RFF space, draw from the
/// bank, optimize instance weights, update the bank, reweight, fuse,
/// classify, then one gradient step on the aggregator head only.
TrainResult train_pipeline(const Dataset& dataset, const DistillerModel* distiller,
                           const RunConfig& cfg);

/// Both stages. `cfg` must be resolved.
TrainResult train_full(const RunConfig& cfg, const Dataset& dataset);

struct BagScore {
  double score = 0.0;
  IndexVector distilled_indices;
  Vector distilled_probs;
};

/// Scores one bag with a frozen bundle. Bank draws use a per-bag seed, so
/// the result does not depend on evaluation order.
BagScore score_bag(const ModelBundle& bundle, const Bag& bag);

EvalReport evaluate(const ModelBundle& bundle, const Dataset& dataset, Split split = Split::kTest);

/// Per bag, one random batch of raw instances (no distillation) is mapped
/// to RFF space; the off-diagonal correlation sum is measured with uniform
/// weights and again after optimizing fresh weights with `opts`.
CorrelationReport correlation_report(const ModelBundle& bundle, const Dataset& dataset,
                                     int batch_size, const DecorrOptions& opts);

std::vector<DistilledSet> distill_all(const ModelBundle& bundle, const Dataset& dataset);

void check_compatible(const ModelBundle& bundle, const Dataset& dataset);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const CorrelationReport& report);

}  // namespace cimil
