#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cimil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexVector = std::vector<int>;

/// Error categories. Each one maps onto a process exit code through
/// exit_code_for(); finer-grained codes keep load/validation failures
/// distinguishable in tests.
enum class ErrorCode {
  kInvalidConfig,
  kInvalidArgument,
  kMissingFile,
  kDimensionMismatch,
  kNonFinite,
  kUnknownTaskMode,
  kLabelInconsistent,
  kBadFormat,
  kBankFrozen,
  kNumericFailure,
  kIoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// 2 = config error, 3 = data error, 4 = numeric failure.
int exit_code_for(ErrorCode code) noexcept;

const char* to_string(ErrorCode code) noexcept;

// Deterministic seed derivation: every component draws from its own
// engine seeded by derive_seed(root, "<component>").
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t derive_seed(std::uint64_t root, std::string_view component) noexcept;

using Rng = std::mt19937_64;

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Binary cross entropy with probabilities clamped to [eps, 1 - eps].
inline constexpr double kProbEpsilon = 1e-7;
double binary_cross_entropy(double prob, int label);

/// Round every entry to the nearest binary32 value. Persisted tensors are
/// f32, so in-memory state is snapped to f32 before it is saved.
void round_to_float(Matrix& m);
void round_to_float(Vector& v);

bool all_finite(const Matrix& m);

}  // namespace cimil
