#include "cimil/eval_metrics.hpp"

#include <algorithm>
#include <numeric>

namespace cimil {

namespace {

void check_scored(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw Error(ErrorCode::kInvalidArgument, "empty score vector");
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "scores and labels differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
}

}  // namespace

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels, double threshold) {
  check_scored(scores, labels);
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted) {
      labels[i] == 1 ? ++tp : ++fp;
    } else {
      labels[i] == 1 ? ++fn : ++tn;
    }
  }
  ThresholdMetrics m;
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.no_actual_positive = tp + fn == 0;
  m.no_predicted_positive = tp + fp == 0;
  m.recall = m.no_actual_positive ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.precision =
      m.no_predicted_positive ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  return m;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scored(scores, labels);
  const long n_pos = std::count(labels.begin(), labels.end(), 1);
  const long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::kInvalidArgument, "AUC undefined");

  // Rank-sum form: sort once, assign mid-ranks to tie groups.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += mid_rank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

RoiMetrics roi_metrics(const DistilledSet& distilled, const Bag& bag) {
  if (!bag.latent_labels) {
    throw Error(ErrorCode::kInvalidArgument, "bag '" + bag.id + "' has no latent labels");
  }
  const auto& latent = *bag.latent_labels;
  RoiMetrics m;
  long hits = 0;
  for (int idx : distilled.indices) {
    if (idx < 0 || idx >= static_cast<int>(latent.size())) {
      throw Error(ErrorCode::kInvalidArgument, "distilled index out of range");
    }
    hits += latent[idx];
  }
  const long positives = std::count(latent.begin(), latent.end(), 1);
  if (!distilled.indices.empty()) {
    m.precision = static_cast<double>(hits) / static_cast<double>(distilled.indices.size());
  }
  if (positives > 0) m.recall = static_cast<double>(hits) / static_cast<double>(positives);
  return m;
}

EvalReport make_eval_report(std::vector<BagResult> per_bag) {
  EvalReport report;
  report.n_test = static_cast<int>(per_bag.size());
  if (per_bag.empty()) throw Error(ErrorCode::kInvalidArgument, "no bags to evaluate");
  std::vector<double> scores;
  std::vector<int> labels;
  for (const BagResult& r : per_bag) {
    scores.push_back(r.score);
    labels.push_back(r.label);
  }
  const ThresholdMetrics tm = threshold_metrics(scores, labels);
  report.acc = tm.acc;
  report.recall = tm.recall;
  report.precision = tm.precision;
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                    std::count(labels.begin(), labels.end(), 0) > 0;
  report.auc_defined = both;
  report.auc = both ? auc(scores, labels) : 0.5;
  report.per_bag = std::move(per_bag);
  return report;
}

void summarize_correlation(CorrelationReport& report) {
  auto summarize = [&](Split split, CorrelationSplitSummary& out) {
    out = {};
    double before = 0.0, after = 0.0;
    for (const auto& row : report.per_bag) {
      if (row.split != split) continue;
      before += row.before;
      after += row.after;
      ++out.n_bags;
    }
    if (out.n_bags == 0) return;
    out.mean_before = before / out.n_bags;
    out.mean_after = after / out.n_bags;
    out.reduction_ratio = out.mean_before > 0.0 ? out.mean_after / out.mean_before : 1.0;
  };
  summarize(Split::kTrain, report.train);
  summarize(Split::kTest, report.test);
}

}  // namespace cimil
