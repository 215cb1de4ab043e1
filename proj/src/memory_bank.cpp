#include "cimil/memory_bank.hpp"

namespace cimil {

const char* to_string(BankUpdateRule rule) noexcept {
  return rule == BankUpdateRule::kAllSlots ? "all" : "drawn";
}

BankUpdateRule parse_bank_update_rule(const std::string& text) {
  if (text == "all") return BankUpdateRule::kAllSlots;
  if (text == "drawn") return BankUpdateRule::kDrawnSlot;
  throw Error(ErrorCode::kInvalidConfig, "unknown bank update rule '" + text + "'");
}

MemoryBank::MemoryBank(int capacity, int rows, int cols, BankUpdateRule rule)
    : rows_(rows), cols_(cols), rule_(rule) {
  if (capacity < 1 || rows < 1 || cols < 1) {
    throw Error(ErrorCode::kInvalidConfig, "memory bank capacity and shape must be >= 1");
  }
  slots_features_.assign(capacity, Matrix::Zero(rows, cols));
  slots_weights_.assign(capacity, Vector::Zero(rows));
}

Vector MemoryBank::alpha() const {
  const int t = capacity();
  Vector a(t);
  for (int i = 0; i < t; ++i) a[i] = static_cast<double>(i + 1) / t;
  return a;
}

MemoryBank::Draw MemoryBank::draw_and_concat(const Matrix& batch_features,
                                             const Vector& batch_weights, Rng& rng) const {
  if (batch_features.rows() != batch_weights.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "batch features and weights differ in length");
  }
  if (fill_count_ == 0) return {batch_features, batch_weights, std::nullopt};
  if (batch_features.cols() != cols_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "batch width " + std::to_string(batch_features.cols()) +
                    " differs from bank width " + std::to_string(cols_));
  }
  std::uniform_int_distribution<int> pick(0, fill_count_ - 1);
  const int i = pick(rng);
  Draw out;
  out.index = i;
  out.features.resize(batch_features.rows() + rows_, cols_);
  out.features << batch_features, slots_features_[i];
  out.weights.resize(batch_weights.size() + rows_);
  out.weights << batch_weights, slots_weights_[i];
  return out;
}

void MemoryBank::update(const Matrix& features, const Vector& weights,
                        std::optional<int> drawn_index) {
  if (frozen_) throw Error(ErrorCode::kBankFrozen, "bank frozen");
  if (features.rows() < rows_ || weights.size() < rows_ || features.cols() != cols_) {
    throw Error(ErrorCode::kDimensionMismatch, "bank update needs at least k rows of width D");
  }
  const auto head_features = features.topRows(rows_);
  const auto head_weights = weights.head(rows_);

  if (fill_count_ < capacity()) {
    slots_features_[fill_count_] = head_features;
    slots_weights_[fill_count_] = head_weights;
    ++fill_count_;
    return;
  }

  const Vector a = alpha();
  auto blend = [&](int i) {
    slots_features_[i] = a[i] * head_features + (1.0 - a[i]) * slots_features_[i];
    slots_weights_[i] = a[i] * head_weights + (1.0 - a[i]) * slots_weights_[i];
  };
  if (rule_ == BankUpdateRule::kAllSlots) {
    for (int i = 0; i < capacity(); ++i) blend(i);
  } else {
    if (!drawn_index || *drawn_index < 0 || *drawn_index >= capacity()) {
      throw Error(ErrorCode::kInvalidArgument, "drawn-slot update needs the drawn index");
    }
    blend(*drawn_index);
  }
}

void MemoryBank::restore(std::vector<Matrix> features, std::vector<Vector> weights,
                         int fill_count, bool frozen) {
  if (features.size() != slots_features_.size() || weights.size() != slots_weights_.size() ||
      fill_count < 0 || fill_count > capacity()) {
    throw Error(ErrorCode::kBadFormat, "bank state does not match bank shape");
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].rows() != rows_ || features[i].cols() != cols_ || weights[i].size() != rows_) {
      throw Error(ErrorCode::kBadFormat, "bank slot has the wrong shape");
    }
  }
  slots_features_ = std::move(features);
  slots_weights_ = std::move(weights);
  fill_count_ = fill_count;
  frozen_ = frozen;
}

void MemoryBank::round_to_float() {
  for (auto& m : slots_features_) cimil::round_to_float(m);
  for (auto& v : slots_weights_) cimil::round_to_float(v);
}

bool MemoryBank::operator==(const MemoryBank& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_ || fill_count_ != other.fill_count_ ||
      frozen_ != other.frozen_ || rule_ != other.rule_ || capacity() != other.capacity()) {
    return false;
  }
  for (int i = 0; i < capacity(); ++i) {
    if (slots_features_[i] != other.slots_features_[i]) return false;
    if (slots_weights_[i] != other.slots_weights_[i]) return false;
  }
  return true;
}

}  // namespace cimil
