#include "cimil/distill.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "cimil/optim.hpp"

namespace cimil {

DistillerModel::DistillerModel(int input_dim, int hidden_dim)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  if (input_dim < 1 || hidden_dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "distiller dimensions must be >= 1");
  }
  params_ = Vector::Zero(w1_size() + 2 * hidden_dim_ + 1);
}

DistillerModel DistillerModel::random(int input_dim, int hidden_dim, Rng& rng) {
  DistillerModel model(input_dim, hidden_dim);
  std::normal_distribution<double> w1_init(0.0, std::sqrt(2.0 / input_dim));
  std::normal_distribution<double> w2_init(0.0, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  auto w1 = model.w1();
  for (Eigen::Index c = 0; c < w1.cols(); ++c) {
    for (Eigen::Index r = 0; r < w1.rows(); ++r) w1(r, c) = w1_init(rng);
  }
  auto w2 = model.w2();
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2[i] = w2_init(rng);
  return model;
}

Vector DistillerModel::logits(const Matrix& features) const {
  if (features.cols() != input_dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dimension mismatch: distiller expects n=" + std::to_string(input_dim_) +
                    ", got " + std::to_string(features.cols()));
  }
  const Matrix hidden = ((features * w1().transpose()).rowwise() + b1().transpose()).cwiseMax(0.0);
  return (hidden * w2()).array() + b2();
}

const char* to_string(DistillMode mode) noexcept {
  return mode == DistillMode::kTopK ? "topk" : "bipolar";
}

DistillMode parse_distill_mode(const std::string& text) {
  if (text == "topk") return DistillMode::kTopK;
  if (text == "bipolar") return DistillMode::kBipolar;
  throw Error(ErrorCode::kInvalidConfig, "unknown distillation mode '" + text + "'");
}

Vector predict_instances(const DistillerModel& model, const Matrix& features) {
  return model.logits(features).unaryExpr([](double z) { return sigmoid(z); });
}

Vector predict_instances(const DistillerModel& model, const Bag& bag) {
  return predict_instances(model, bag.features);
}

namespace {

IndexVector ranked(const Vector& probs, int count, bool largest) {
  IndexVector order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  auto cmp = [&](int a, int b) {
    if (probs[a] != probs[b]) return largest ? probs[a] > probs[b] : probs[a] < probs[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + count, order.end(), cmp);
  order.resize(count);
  return order;
}

}  // namespace

IndexVector select_top_k(const Vector& probs, int k) {
  if (k < 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 0");
  if (k > probs.size()) {
    throw Error(ErrorCode::kInvalidArgument, "bag smaller than distillation scale");
  }
  return ranked(probs, k, /*largest=*/true);
}

IndexVector select_bipolar(const Vector& probs, int k) {
  if (k < 0 || k % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "bipolar selection needs an even k");
  }
  if (k > probs.size()) {
    throw Error(ErrorCode::kInvalidArgument, "bag smaller than distillation scale");
  }
  // One ranking (descending probability, ascending index) serves both
  // halves: its head is the max-half and its reversed tail the min-half,
  // which keeps the halves disjoint whenever k <= K.
  const int size = static_cast<int>(probs.size());
  const IndexVector order = ranked(probs, size, /*largest=*/true);
  const int half = k / 2;
  IndexVector out(order.begin(), order.begin() + half);
  for (int i = 0; i < half; ++i) out.push_back(order[size - 1 - i]);
  return out;
}

double distillation_loss(const Vector& top_probs, int bag_label) {
  if (top_probs.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "distillation loss over an empty set");
  }
  double total = 0.0;
  for (double p : top_probs) total += binary_cross_entropy(p, bag_label);
  return total / static_cast<double>(top_probs.size());
}

int effective_k(int k, int bag_size, bool allow_small_bags) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (k <= bag_size) return k;
  if (!allow_small_bags) {
    throw Error(ErrorCode::kInvalidArgument, "bag smaller than distillation scale");
  }
  return bag_size;
}

LossAndGrad distillation_loss_and_grad(const DistillerModel& model, const Matrix& features,
                                       int bag_label, int k) {
  const int k_eff = std::min<int>(k, static_cast<int>(features.rows()));
  if (k_eff < 1) throw Error(ErrorCode::kInvalidArgument, "empty bag");
  const Vector probs = predict_instances(model, features);
  const IndexVector top = select_top_k(probs, k_eff);

  LossAndGrad out;
  out.grad = Vector::Zero(model.params().size());
  DistillerModel grad_view(model.input_dim(), model.hidden_dim());
  auto gw1 = grad_view.w1();
  auto gb1 = grad_view.b1();
  auto gw2 = grad_view.w2();
  double gb2 = 0.0;

  const double inv_k = 1.0 / k_eff;
  for (int idx : top) {
    const double p = probs[idx];
    out.loss += binary_cross_entropy(p, bag_label) * inv_k;
    // Clamped probabilities contribute a flat loss and no gradient.
    if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) continue;
    const double dz = (p - bag_label) * inv_k;
    const Vector x = features.row(idx).transpose();
    const Vector pre = model.w1() * x + model.b1();
    const Vector hidden = pre.cwiseMax(0.0);
    gw2 += dz * hidden;
    gb2 += dz;
    const Vector dpre = (dz * model.w2().array() * (pre.array() > 0.0).cast<double>()).matrix();
    gw1 += dpre * x.transpose();
    gb1 += dpre;
  }
  grad_view.b2() = gb2;
  out.grad = grad_view.params();
  return out;
}

DistillerTrainResult train_distiller(const Dataset& dataset, const DistillerTrainConfig& cfg) {
  const auto train = dataset.split(Split::kTrain);
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "train split is empty");
  if (cfg.epochs < 0) throw Error(ErrorCode::kInvalidConfig, "epochs must be >= 0");
  for (const Bag* bag : train) effective_k(cfg.k, bag->size(), cfg.allow_small_bags);

  Rng rng(cfg.seed);
  DistillerTrainResult result{DistillerModel::random(dataset.n, cfg.hidden_dim, rng), {}};
  MomentumSgd opt(result.model.params().size(), cfg.lr, cfg.momentum);

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int i : order) {
      const Bag& bag = *train[i];
      LossAndGrad lg = distillation_loss_and_grad(result.model, bag.features, bag.bag_label, cfg.k);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite distillation loss at epoch " << epoch + 1 << ", bag '" << bag.id
            << "' (loss=" << lg.loss << ")";
        throw Error(ErrorCode::kNumericFailure, msg.str());
      }
      epoch_loss += lg.loss;
      opt.step(result.model.params(), lg.grad);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  return result;
}

DistilledSet distill_bag(const DistillerModel& model, const Bag& bag, DistillMode mode, int k,
                         bool allow_small_bags) {
  const Vector probs = predict_instances(model, bag);
  int k_eff = effective_k(k, bag.size(), allow_small_bags);
  DistilledSet out;
  out.bag_id = bag.id;
  out.mode = mode;
  if (mode == DistillMode::kTopK) {
    out.indices = select_top_k(probs, k_eff);
  } else {
    if (k % 2 != 0) throw Error(ErrorCode::kInvalidArgument, "bipolar selection needs an even k");
    k_eff -= k_eff % 2;
    if (k_eff == 0) {
      // A single-instance bag forwards its only instance.
      out.indices = {0};
    } else {
      out.indices = select_bipolar(probs, k_eff);
    }
  }
  out.features.resize(static_cast<Eigen::Index>(out.indices.size()), bag.dim());
  out.probs.resize(static_cast<Eigen::Index>(out.indices.size()));
  for (std::size_t i = 0; i < out.indices.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = bag.features.row(out.indices[i]);
    out.probs[static_cast<Eigen::Index>(i)] = probs[out.indices[i]];
  }
  return out;
}

}  // namespace cimil
