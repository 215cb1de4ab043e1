#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cimil/common.hpp"

namespace cimil {

enum class BankUpdateRule {
  kAllSlots,   // every slot i blends the batch in with its own alpha_i
  kDrawnSlot,  // only the slot drawn for this batch is blended
};
const char* to_string(BankUpdateRule rule) noexcept;
BankUpdateRule parse_bank_update_rule(const std::string& text);

/// Fixed-capacity store of past RFF feature blocks and their weights.
/// Slot i (1-based) smooths with alpha_i = i / t: slot t always holds the
/// latest batch, slot 1 the longest memory.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int capacity, int rows, int cols,
             BankUpdateRule rule = BankUpdateRule::kAllSlots);

  struct Draw {
    Matrix features;
    Vector weights;
    std::optional<int> index;  // 0-based slot, none when the bank was empty
  };

  /// Appends one uniformly drawn filled slot below the batch. An empty
  /// bank returns the batch unchanged.
  Draw draw_and_concat(const Matrix& batch_features, const Vector& batch_weights,
                       Rng& rng) const;

  /// Stores the first `rows()` rows of the batch. Fills the next empty slot
  /// while the bank is not full, otherwise blends per the update rule.
  void update(const Matrix& features, const Vector& weights,
              std::optional<int> drawn_index = std::nullopt);

  void freeze() { frozen_ = true; }

  int capacity() const { return static_cast<int>(slots_features_.size()); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int fill_count() const { return fill_count_; }
  bool frozen() const { return frozen_; }
  bool empty() const { return fill_count_ == 0; }
  BankUpdateRule rule() const { return rule_; }
  Vector alpha() const;

  const Matrix& slot_features(int i) const { return slots_features_.at(i); }
  const Vector& slot_weights(int i) const { return slots_weights_.at(i); }

  /// Direct slot access for deserialization.
  void restore(std::vector<Matrix> features, std::vector<Vector> weights, int fill_count,
               bool frozen);

  /// Snap stored values to f32 (see round_to_float).
  void round_to_float();

  bool operator==(const MemoryBank& other) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int fill_count_ = 0;
  bool frozen_ = false;
  BankUpdateRule rule_ = BankUpdateRule::kAllSlots;
  std::vector<Matrix> slots_features_;
  std::vector<Vector> slots_weights_;
};

}  // namespace cimil
