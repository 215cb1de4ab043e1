#pragma once

#include <cstdint>
#include <string>

#include "cimil/common.hpp"

namespace cimil {

/// Frozen random Fourier map. Sample j maps every feature coordinate h to
/// sqrt(2) * cos(omega_j * h + phi_j), with omega_j ~ N(0, 1) and
/// phi_j ~ U[0, 2*pi).
struct RffMap {
  Vector omega;
  Vector phi;
  std::uint64_t seed = 0;

  int samples() const { return static_cast<int>(omega.size()); }
};

RffMap build_rff_map(int samples, std::uint64_t seed);

/// L x n -> L x (n * m). Columns [j*n, (j+1)*n) hold sample j.
Matrix apply_rff(const RffMap& map, const Matrix& features);

/// Row i scaled by u_i.
Matrix reweight(const Matrix& features, const Vector& weights);

/// Row covariance with the unbiased 1/(D-1) normalizer; D = columns.
Matrix covariance_matrix(const Matrix& weighted);

/// M(i, j) = <features_i, weighted_j>: unweighted rows against weighted
/// rows. Not symmetric unless the weights are uniform.
Matrix inner_product_matrix(const Matrix& features, const Matrix& weighted);

enum class DecorrMode { kCov, kInprod, kBoth };
const char* to_string(DecorrMode mode) noexcept;
DecorrMode parse_decorr_mode(const std::string& text);

struct CorrelationMatrices {
  Matrix cov;
  Matrix inprod;
  DecorrMode mode = DecorrMode::kCov;
};

/// Builds the matrices selected by `mode` for features reweighted by u.
/// `inprod_symmetric` weights both sides of the inner product.
CorrelationMatrices correlation_matrices(const Matrix& features, const Vector& weights,
                                         DecorrMode mode, bool inprod_symmetric = false);

double off_diagonal_abs_sum(const Matrix& m);

/// Sum of absolute off-diagonal entries of each selected matrix.
double decorrelation_loss(const CorrelationMatrices& matrices);

/// Per-instance weights parametrized as u_i = L * softplus(v_i) / sum_j softplus(v_j),
/// which keeps every u_i positive and sum(u) == L.
class WeightState {
 public:
  WeightState() = default;
  explicit WeightState(Vector raw) : raw_(std::move(raw)) {}

  /// u == 1 everywhere.
  static WeightState uniform(int size);
  /// Raw parameters reproducing the given positive weights up to scale.
  static WeightState from_weights(const Vector& weights);

  int size() const { return static_cast<int>(raw_.size()); }
  const Vector& raw() const { return raw_; }
  Vector& raw() { return raw_; }
  Vector weights() const;

 private:
  Vector raw_;
};

struct DecorrOptions {
  int steps = 20;
  double lr = 0.05;
  DecorrMode mode = DecorrMode::kCov;
  bool inprod_symmetric = false;
};

/// Loss and weight-gradient for one feature set. The Gram matrices are
/// built once, so each evaluation costs O(L^2) instead of O(L^2 D).
class DecorrObjective {
 public:
  DecorrObjective(const Matrix& features, DecorrMode mode, bool inprod_symmetric);

  double loss(const Vector& weights) const;
  /// d loss / d u.
  Vector grad_weights(const Vector& weights) const;
  /// d loss / d v through the softplus normalization.
  Vector grad_raw(const WeightState& state) const;

  int size() const { return static_cast<int>(cov_abs_.rows()); }

 private:
  DecorrMode mode_;
  bool symmetric_;
  Matrix cov_abs_;     // |centered Gram| / (D-1), zero diagonal
  Matrix inprod_abs_;  // |raw Gram|, zero diagonal
  Vector inprod_col_;  // column sums of inprod_abs_
};

Vector decorrelation_grad(const Matrix& features, const WeightState& state, DecorrMode mode,
                          bool inprod_symmetric = false);

struct DecorrResult {
  WeightState state;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int halvings = 0;
  int rejected_steps = 0;
  // Sum/positivity constraint checks made after every step.
  long constraint_checks = 0;
  long constraint_violations = 0;
};

/// Gradient descent on the raw weights. A step whose loss would increase
/// is retried with the step size halved, at most 10 times; if none of the
/// retries helps the step is dropped, so the loss never increases.
DecorrResult optimize_weights(const Matrix& features, const WeightState& init,
                              const DecorrOptions& opts);

bool weights_satisfy_constraint(const Vector& weights, double tol = 1e-10);

}  // namespace cimil
