#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cimil/common.hpp"
#include "cimil/dataset.hpp"
#include "cimil/distill.hpp"

namespace cimil {

struct ThresholdMetrics {
  double acc = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  // Set when nothing was predicted positive (precision reported as 0).
  bool no_predicted_positive = false;
  // Set when no label is positive (recall reported as 0).
  bool no_actual_positive = false;
};

/// Scores >= threshold count as positive predictions.
ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double threshold = 0.5);

/// Exact Mann-Whitney AUC: (concordant + 0.5 * tied) / (#pos * #neg).
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RoiMetrics {
  double precision = 0.0;
  double recall = 0.0;
};

RoiMetrics roi_metrics(const DistilledSet& distilled, const Bag& bag);

struct BagResult {
  std::string id;
  int label = 0;
  double score = 0.0;
  IndexVector distilled_indices;
};

struct EvalReport {
  double acc = 0.0;
  double auc = 0.0;
  bool auc_defined = true;
  double recall = 0.0;
  double precision = 0.0;
  int n_test = 0;
  std::vector<BagResult> per_bag;
};

EvalReport make_eval_report(std::vector<BagResult> per_bag);

struct CorrelationSplitSummary {
  double mean_before = 0.0;
  double mean_after = 0.0;
  double reduction_ratio = 1.0;  // mean_after / mean_before
  int n_bags = 0;
};

struct CorrelationBagRow {
  std::string id;
  Split split = Split::kTrain;
  double before = 0.0;
  double after = 0.0;
};

struct CorrelationReport {
  CorrelationSplitSummary train;
  CorrelationSplitSummary test;
  std::vector<CorrelationBagRow> per_bag;
};

/// Averages per-bag rows into the per-split summaries.
void summarize_correlation(CorrelationReport& report);

}  // namespace cimil
