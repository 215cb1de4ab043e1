#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cimil/config.hpp"

namespace cimil {

struct AblationCell {
  bool stage1 = false;
  bool stage2 = false;
  std::uint64_t seed = 0;
  double acc = 0.0;
  double auc = 0.0;
  std::string config_hash;
};

struct AblationRow {
  bool stage1 = false;
  bool stage2 = false;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  int n_seeds = 0;
  std::string config_hash;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::vector<AblationRow> rows;  // (x,x), (v,x), (x,v), (v,v)
};

/// Trains and evaluates the four {stage1, stage2} on/off conditions for
/// every seed. With synthetic data each seed draws its own dataset. The
/// stage-1 model is shared by both conditions that use it.
AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds);

struct KSweepRow {
  int k = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double acc = 0.0;
  double auc = 0.0;
  std::string error;
  std::string config_hash;
};

/// One full train + test evaluation per (seed, k). A failing cell is
/// recorded as an error row and the sweep continues.
std::vector<KSweepRow> run_ksweep(const RunConfig& base, const std::vector<int>& k_values,
                                  const std::vector<std::uint64_t>& seeds);

void write_ablation_csv(const AblationResult& result, std::ostream& out);
void write_ablation_cells_csv(const AblationResult& result, std::ostream& out);
void write_ksweep_csv(const std::vector<KSweepRow>& rows, std::ostream& out);

}  // namespace cimil
