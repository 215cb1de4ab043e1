#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cimil/common.hpp"
#include "cimil/dataset.hpp"

namespace cimil {

/// Instance scorer: n -> hidden (ReLU) -> scalar logit, sigmoid at
/// prediction. Parameters live in one flat vector laid out as
/// [W1 (hidden x n, column-major) | b1 | w2 | b2] so the optimizer,
/// serializer and gradient checks can treat them uniformly.
class DistillerModel {
 public:
  DistillerModel() = default;
  /// Zero-initialized model; predicts 0.5 everywhere.
  DistillerModel(int input_dim, int hidden_dim);

  static DistillerModel random(int input_dim, int hidden_dim, Rng& rng);

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> w1() { return {params_.data(), hidden_dim_, input_dim_}; }
  Eigen::Map<const Matrix> w1() const { return {params_.data(), hidden_dim_, input_dim_}; }
  Eigen::Map<Vector> b1() { return {params_.data() + w1_size(), hidden_dim_}; }
  Eigen::Map<const Vector> b1() const { return {params_.data() + w1_size(), hidden_dim_}; }
  Eigen::Map<Vector> w2() { return {params_.data() + w1_size() + hidden_dim_, hidden_dim_}; }
  Eigen::Map<const Vector> w2() const {
    return {params_.data() + w1_size() + hidden_dim_, hidden_dim_};
  }
  double& b2() { return params_[params_.size() - 1]; }
  double b2() const { return params_[params_.size() - 1]; }

  /// Logit per row of `features` (K x n).
  Vector logits(const Matrix& features) const;

 private:
  Eigen::Index w1_size() const { return static_cast<Eigen::Index>(hidden_dim_) * input_dim_; }

  int input_dim_ = 0;
  int hidden_dim_ = 0;
  Vector params_;
};

enum class DistillMode { kTopK, kBipolar };
const char* to_string(DistillMode mode) noexcept;
DistillMode parse_distill_mode(const std::string& text);

struct DistilledSet {
  std::string bag_id;
  IndexVector indices;
  Matrix features;  // k x n, row i = bag row indices[i]
  Vector probs;
  DistillMode mode = DistillMode::kTopK;
};

Vector predict_instances(const DistillerModel& model, const Bag& bag);
Vector predict_instances(const DistillerModel& model, const Matrix& features);

/// Indices of the k largest probabilities, sorted by descending
/// probability then ascending index.
IndexVector select_top_k(const Vector& probs, int k);

/// k/2 largest (descending) followed by k/2 smallest (ascending).
IndexVector select_bipolar(const Vector& probs, int k);

/// Mean binary cross entropy of the given top-k probabilities against
/// the bag label.
double distillation_loss(const Vector& top_probs, int bag_label);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Loss over the top-k instances of one bag and its gradient with respect
/// to every model parameter. k is clipped to the bag size.
LossAndGrad distillation_loss_and_grad(const DistillerModel& model, const Matrix& features,
                                       int bag_label, int k);

struct DistillerTrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  double momentum = 0.9;
  int hidden_dim = 128;
  int k = 32;
  // When false, bags smaller than k are an error instead of using all K.
  bool allow_small_bags = true;
  std::uint64_t seed = 0;
};

struct DistillerTrainResult {
  DistillerModel model;
  std::vector<double> loss_history;  // mean loss per epoch
};

DistillerTrainResult train_distiller(const Dataset& dataset, const DistillerTrainConfig& cfg);

/// Effective selection size: min(k, K), or an error when small bags are
/// not allowed.
int effective_k(int k, int bag_size, bool allow_small_bags);

DistilledSet distill_bag(const DistillerModel& model, const Bag& bag, DistillMode mode, int k,
                         bool allow_small_bags = true);

}  // namespace cimil
