#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cimil/aggregate.hpp"
#include "cimil/dataset.hpp"
#include "cimil/distill.hpp"
#include "cimil/memory_bank.hpp"
#include "cimil/rff_decorr.hpp"

namespace cimil {

/// Every knob of a run. A config is "resolved" once the data-dependent
/// defaults (k, mode) and the derived seeds are filled in; resolved
/// configs are written next to every output.
///
/// File format is JSON. Keys mirror the CLI flags:
///
///   {
///     "seed": 1, "data": "", "out": "out",
///     "k": "auto" | int, "mode": "auto" | "topk" | "bipolar",
///     "allow_small_bags": true, "stage1": true, "stage2": true,
///     "epochs-stage1": 30, "lr-stage1": 0.001,
///     "epochs-stage2": 30, "lr-stage2": 0.001,
///     "distiller": {"hidden": 128, "momentum": 0.9},
///     "rff": {"m": 1, "seed": null},
///     "decorr": {"mode": "cov", "steps": 20, "lr": 0.05, "inprod_symmetric": false},
///     "bank": {"t": 8, "update_rule": "all", "warmup": false},
///     "agg": {"variant": "gated_attention", "d_a": 64, "d_mlp": 64, "momentum": 0.9},
///     "synth": {"n_bags_train": 200, ..., "seed": null}
///   }
///
/// Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string data;  // empty: use the synthetic generator
  std::string out = "out";

  SyntheticConfig synth;
  std::optional<std::uint64_t> synth_seed;

  int k = 0;  // 0: auto
  std::optional<DistillMode> mode;  // none: from the dataset task mode
  bool allow_small_bags = true;

  bool stage1 = true;
  bool stage2 = true;

  int epochs_stage1 = 30;
  double lr_stage1 = 1e-3;
  double momentum_stage1 = 0.9;
  int hidden_stage1 = 128;

  int epochs_stage2 = 30;
  double lr_stage2 = 1e-3;
  double momentum_stage2 = 0.9;

  int rff_m = 1;
  std::optional<std::uint64_t> rff_seed;

  DecorrOptions decorr;

  int bank_t = 8;
  BankUpdateRule bank_rule = BankUpdateRule::kAllSlots;
  bool bank_warmup = false;

  AggregatorVariant agg_variant = AggregatorVariant::kGatedAttention;
  int agg_d_a = 64;
  int agg_d_mlp = 64;

  void validate() const;
  bool resolved() const { return k > 0 && mode.has_value() && rff_seed.has_value(); }
};

nlohmann::json to_json(const RunConfig& cfg);
/// Starts from defaults and applies every key present in `j`.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Recursive merge of `patch` into `base`.
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

RunConfig load_run_config(const std::filesystem::path& path);

/// Seed of the synthetic generator for this run.
std::uint64_t synth_seed_for(const RunConfig& cfg);
/// Dataset named by cfg.data, or the synthetic dataset for cfg.
Dataset materialize_dataset(const RunConfig& cfg);

/// Fills data-dependent defaults: k = 64 for bags of >= 1000 instances
/// and 32 otherwise, mode from the task mode, derived seeds.
RunConfig resolve(RunConfig cfg, const Dataset& dataset);

std::string config_hash(const nlohmann::json& resolved);

}  // namespace cimil
