#pragma once

#include <string>

#include "cimil/common.hpp"

namespace cimil {

enum class AggregatorVariant { kGatedAttention, kMaxPool, kMeanPool };
const char* to_string(AggregatorVariant variant) noexcept;
AggregatorVariant parse_aggregator_variant(const std::string& text);

/// Bag-level head: pooling over instance rows, then an MLP
/// D -> mlp_dim (ReLU) -> 1 (sigmoid).
///
/// Gated attention scores instance f with
///   s = w . (tanh(V f + bv) * sigmoid(U f + bu))
/// and pools with softmax(s). The pooling variants have no attention
/// parameters and report uniform attention.
///
/// Flat parameter layout:
///   [V | bv | U | bu | w]  (gated attention only; V, U column-major)
///   [W1 | b1 | w2 | b2]    (MLP head)
class AggregatorModel {
 public:
  AggregatorModel() = default;
  /// Zero-initialized; classify() returns 0.5 for any input.
  AggregatorModel(AggregatorVariant variant, int input_dim, int attention_dim, int mlp_dim);

  static AggregatorModel random(AggregatorVariant variant, int input_dim, int attention_dim,
                                int mlp_dim, Rng& rng);

  AggregatorVariant variant() const { return variant_; }
  int input_dim() const { return input_dim_; }
  int attention_dim() const { return attention_dim_; }
  int mlp_dim() const { return mlp_dim_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<const Matrix> attn_v() const { return {at(off_v()), attention_dim_, input_dim_}; }
  Eigen::Map<const Vector> attn_bv() const { return {at(off_bv()), attention_dim_}; }
  Eigen::Map<const Matrix> attn_u() const { return {at(off_u()), attention_dim_, input_dim_}; }
  Eigen::Map<const Vector> attn_bu() const { return {at(off_bu()), attention_dim_}; }
  Eigen::Map<const Vector> attn_w() const { return {at(off_w()), attention_dim_}; }
  Eigen::Map<const Matrix> mlp_w1() const { return {at(off_w1()), mlp_dim_, input_dim_}; }
  Eigen::Map<const Vector> mlp_b1() const { return {at(off_b1()), mlp_dim_}; }
  Eigen::Map<const Vector> mlp_w2() const { return {at(off_w2()), mlp_dim_}; }
  double mlp_b2() const { return params_[off_b2()]; }

  Eigen::Map<Matrix> attn_v() { return {at(off_v()), attention_dim_, input_dim_}; }
  Eigen::Map<Vector> attn_bv() { return {at(off_bv()), attention_dim_}; }
  Eigen::Map<Matrix> attn_u() { return {at(off_u()), attention_dim_, input_dim_}; }
  Eigen::Map<Vector> attn_bu() { return {at(off_bu()), attention_dim_}; }
  Eigen::Map<Vector> attn_w() { return {at(off_w()), attention_dim_}; }
  Eigen::Map<Matrix> mlp_w1() { return {at(off_w1()), mlp_dim_, input_dim_}; }
  Eigen::Map<Vector> mlp_b1() { return {at(off_b1()), mlp_dim_}; }
  Eigen::Map<Vector> mlp_w2() { return {at(off_w2()), mlp_dim_}; }
  double& mlp_b2() { return params_[off_b2()]; }

  bool has_attention() const { return variant_ == AggregatorVariant::kGatedAttention; }

 private:
  Eigen::Index attn_block() const {
    return static_cast<Eigen::Index>(attention_dim_) * input_dim_;
  }
  Eigen::Index off_v() const { return 0; }
  Eigen::Index off_bv() const { return off_v() + attn_block(); }
  Eigen::Index off_u() const { return off_bv() + attention_dim_; }
  Eigen::Index off_bu() const { return off_u() + attn_block(); }
  Eigen::Index off_w() const { return off_bu() + attention_dim_; }
  Eigen::Index off_w1() const { return has_attention() ? off_w() + attention_dim_ : 0; }
  Eigen::Index off_b1() const {
    return off_w1() + static_cast<Eigen::Index>(mlp_dim_) * input_dim_;
  }
  Eigen::Index off_w2() const { return off_b1() + mlp_dim_; }
  Eigen::Index off_b2() const { return off_w2() + mlp_dim_; }

  double* at(Eigen::Index offset) { return params_.data() + offset; }
  const double* at(Eigen::Index offset) const { return params_.data() + offset; }

  AggregatorVariant variant_ = AggregatorVariant::kGatedAttention;
  int input_dim_ = 0;
  int attention_dim_ = 0;
  int mlp_dim_ = 0;
  Vector params_;
};

struct FuseResult {
  Vector fused;      // D
  Vector attention;  // one weight per instance, sums to 1
};

FuseResult attention_fuse(const AggregatorModel& model, const Matrix& features);

double classify(const AggregatorModel& model, const Vector& fused);

/// Negative log-likelihood of the bag label, probabilities clamped to
/// [1e-7, 1 - 1e-7].
double wsi_loss(double pred, int bag_label);

struct AggregatorLossGrad {
  double loss = 0.0;
  double pred = 0.0;
  Vector grad;  // same layout as AggregatorModel::params()
};

/// wsi_loss(classify(attention_fuse(features))) and its gradient with
/// respect to every aggregator and head parameter.
AggregatorLossGrad aggregator_loss_and_grad(const AggregatorModel& model, const Matrix& features,
                                            int bag_label);

}  // namespace cimil
