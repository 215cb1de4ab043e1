#include "cimil/common.hpp"

#include <algorithm>
#include <cmath>

namespace cimil {

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidArgument:
      return 2;
    case ErrorCode::kNumericFailure:
      return 4;
    default:
      return 3;
  }
}

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidConfig: return "invalid config";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kMissingFile: return "missing file";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kUnknownTaskMode: return "unknown task_mode";
    case ErrorCode::kLabelInconsistent: return "label inconsistent";
    case ErrorCode::kBadFormat: return "bad format";
    case ErrorCode::kBankFrozen: return "bank frozen";
    case ErrorCode::kNumericFailure: return "numeric failure";
    case ErrorCode::kIoError: return "io error";
  }
  return "unknown";
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view component) noexcept {
  return splitmix64(splitmix64(root) ^ fnv1a64(component));
}

double binary_cross_entropy(double prob, int label) {
  const double p = std::clamp(prob, kProbEpsilon, 1.0 - kProbEpsilon);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

void round_to_float(Matrix& m) {
  m = m.cast<float>().cast<double>();
}

void round_to_float(Vector& v) {
  v = v.cast<float>().cast<double>();
}

bool all_finite(const Matrix& m) {
  return m.allFinite();
}

}  // namespace cimil
