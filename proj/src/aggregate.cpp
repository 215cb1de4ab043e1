#include "cimil/aggregate.hpp"

#include <algorithm>

namespace cimil {

const char* to_string(AggregatorVariant variant) noexcept {
  switch (variant) {
    case AggregatorVariant::kGatedAttention: return "gated_attention";
    case AggregatorVariant::kMaxPool: return "max_pool";
    case AggregatorVariant::kMeanPool: return "mean_pool";
  }
  return "gated_attention";
}

AggregatorVariant parse_aggregator_variant(const std::string& text) {
  if (text == "gated_attention") return AggregatorVariant::kGatedAttention;
  if (text == "max_pool") return AggregatorVariant::kMaxPool;
  if (text == "mean_pool") return AggregatorVariant::kMeanPool;
  throw Error(ErrorCode::kInvalidConfig, "unknown aggregator variant '" + text + "'");
}

AggregatorModel::AggregatorModel(AggregatorVariant variant, int input_dim, int attention_dim,
                                 int mlp_dim)
    : variant_(variant), input_dim_(input_dim), attention_dim_(attention_dim), mlp_dim_(mlp_dim) {
  if (input_dim < 1 || mlp_dim < 1 || (has_attention() && attention_dim < 1)) {
    throw Error(ErrorCode::kInvalidConfig, "aggregator dimensions must be >= 1");
  }
  if (!has_attention()) attention_dim_ = 0;
  params_ = Vector::Zero(off_b2() + 1);
}

AggregatorModel AggregatorModel::random(AggregatorVariant variant, int input_dim,
                                        int attention_dim, int mlp_dim, Rng& rng) {
  AggregatorModel model(variant, input_dim, attention_dim, mlp_dim);
  auto fill = [&rng](auto&& block, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = dist(rng);
  };
  const double d = input_dim;
  if (model.has_attention()) {
    fill(model.attn_v(), 1.0 / std::sqrt(d));
    fill(model.attn_u(), 1.0 / std::sqrt(d));
    fill(model.attn_w(), 1.0 / std::sqrt(static_cast<double>(attention_dim)));
  }
  fill(model.mlp_w1(), std::sqrt(2.0 / d));
  fill(model.mlp_w2(), 1.0 / std::sqrt(static_cast<double>(mlp_dim)));
  return model;
}

namespace {

void check_features(const AggregatorModel& model, const Matrix& features) {
  if (features.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "empty feature set");
  if (features.cols() != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dimension mismatch: aggregator expects D=" + std::to_string(model.input_dim()) +
                    ", got " + std::to_string(features.cols()));
  }
}

struct AttentionCache {
  Matrix tanh_part;     // L x d_a
  Matrix sigmoid_part;  // L x d_a
};

Vector softmax(const Vector& scores) {
  const double top = scores.maxCoeff();
  Vector e = (scores.array() - top).exp();
  return e / e.sum();
}

FuseResult fuse_impl(const AggregatorModel& model, const Matrix& features, AttentionCache* cache) {
  check_features(model, features);
  const Eigen::Index rows = features.rows();
  FuseResult out;
  switch (model.variant()) {
    case AggregatorVariant::kGatedAttention: {
      Matrix a = ((features * model.attn_v().transpose()).rowwise() +
                  model.attn_bv().transpose()).array().tanh();
      Matrix g = ((features * model.attn_u().transpose()).rowwise() +
                  model.attn_bu().transpose()).unaryExpr([](double z) { return sigmoid(z); });
      const Vector scores = a.cwiseProduct(g) * model.attn_w();
      out.attention = softmax(scores);
      out.fused = features.transpose() * out.attention;
      if (cache) *cache = {std::move(a), std::move(g)};
      break;
    }
    case AggregatorVariant::kMeanPool:
      out.attention = Vector::Constant(rows, 1.0 / rows);
      out.fused = features.colwise().mean().transpose();
      break;
    case AggregatorVariant::kMaxPool: {
      out.attention = Vector::Constant(rows, 1.0 / rows);
      // Pooling has no parameters, so no argmax is kept for the backward pass.
      out.fused = features.colwise().maxCoeff().transpose();
      break;
    }
  }
  return out;
}

}  // namespace

FuseResult attention_fuse(const AggregatorModel& model, const Matrix& features) {
  return fuse_impl(model, features, nullptr);
}

double classify(const AggregatorModel& model, const Vector& fused) {
  if (fused.size() != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "dimension mismatch: fused vector length");
  }
  const Vector hidden = (model.mlp_w1() * fused + model.mlp_b1()).cwiseMax(0.0);
  return sigmoid(model.mlp_w2().dot(hidden) + model.mlp_b2());
}

double wsi_loss(double pred, int bag_label) {
  return binary_cross_entropy(pred, bag_label);
}

AggregatorLossGrad aggregator_loss_and_grad(const AggregatorModel& model, const Matrix& features,
                                            int bag_label) {
  AttentionCache cache;
  const FuseResult fuse = fuse_impl(model, features, &cache);

  const Vector pre = model.mlp_w1() * fuse.fused + model.mlp_b1();
  const Vector hidden = pre.cwiseMax(0.0);
  AggregatorLossGrad out;
  out.pred = sigmoid(model.mlp_w2().dot(hidden) + model.mlp_b2());
  out.loss = wsi_loss(out.pred, bag_label);

  AggregatorModel grad(model.variant(), model.input_dim(), model.attention_dim(),
                       model.mlp_dim());
  if (out.pred < kProbEpsilon || out.pred > 1.0 - kProbEpsilon) {
    out.grad = grad.params();
    return out;
  }
  const double dz = out.pred - bag_label;
  grad.mlp_w2() = dz * hidden;
  grad.mlp_b2() = dz;
  const Vector dpre = (dz * model.mlp_w2().array() * (pre.array() > 0.0).cast<double>()).matrix();
  grad.mlp_w1() = dpre * fuse.fused.transpose();
  grad.mlp_b1() = dpre;

  if (model.has_attention()) {
    const Vector dfused = model.mlp_w1().transpose() * dpre;
    const Vector dattn = features * dfused;
    const Vector dscores =
        fuse.attention.cwiseProduct((dattn.array() - fuse.attention.dot(dattn)).matrix());
    const Matrix gated = cache.tanh_part.cwiseProduct(cache.sigmoid_part);
    grad.attn_w() = gated.transpose() * dscores;
    const Matrix dgated = dscores * model.attn_w().transpose();
    const Matrix dpre_a = dgated.cwiseProduct(cache.sigmoid_part)
                              .cwiseProduct((1.0 - cache.tanh_part.array().square()).matrix());
    const Matrix dpre_g =
        dgated.cwiseProduct(cache.tanh_part)
            .cwiseProduct(
                (cache.sigmoid_part.array() * (1.0 - cache.sigmoid_part.array())).matrix());
    grad.attn_v() = dpre_a.transpose() * features;
    grad.attn_bv() = dpre_a.colwise().sum().transpose();
    grad.attn_u() = dpre_g.transpose() * features;
    grad.attn_bu() = dpre_g.colwise().sum().transpose();
  }
  out.grad = grad.params();
  return out;
}

}  // namespace cimil
