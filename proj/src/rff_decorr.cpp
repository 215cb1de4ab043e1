#include "cimil/rff_decorr.hpp"

#include <numbers>

namespace cimil {

RffMap build_rff_map(int samples, std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::kInvalidArgument, "rff sample count must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> freq(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  RffMap map;
  map.seed = seed;
  map.omega.resize(samples);
  map.phi.resize(samples);
  for (int j = 0; j < samples; ++j) {
    map.omega[j] = freq(rng);
    double p = phase(rng);
    // uniform_real_distribution may round up to the open bound.
    if (p >= 2.0 * std::numbers::pi) p = 0.0;
    map.phi[j] = p;
  }
  return map;
}

Matrix apply_rff(const RffMap& map, const Matrix& features) {
  if (!features.allFinite()) throw Error(ErrorCode::kNonFinite, "rff input is not finite");
  const Eigen::Index n = features.cols();
  Matrix out(features.rows(), n * map.samples());
  for (int j = 0; j < map.samples(); ++j) {
    out.middleCols(j * n, n) =
        std::numbers::sqrt2 * (map.omega[j] * features.array() + map.phi[j]).cos();
  }
  return out;
}

Matrix reweight(const Matrix& features, const Vector& weights) {
  if (weights.size() != features.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "weight vector length differs from row count");
  }
  return weights.asDiagonal() * features;
}

Matrix covariance_matrix(const Matrix& weighted) {
  const Eigen::Index d = weighted.cols();
  if (d < 2) throw Error(ErrorCode::kInvalidArgument, "covariance needs at least 2 columns");
  const Matrix centered = weighted.colwise() - weighted.rowwise().mean();
  Matrix cov = centered * centered.transpose() / static_cast<double>(d - 1);
  // Mirror the lower triangle so the result is exactly symmetric.
  return cov.selfadjointView<Eigen::Lower>();
}

Matrix inner_product_matrix(const Matrix& features, const Matrix& weighted) {
  if (features.rows() != weighted.rows() || features.cols() != weighted.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "inner product needs matching shapes");
  }
  return features * weighted.transpose();
}

const char* to_string(DecorrMode mode) noexcept {
  switch (mode) {
    case DecorrMode::kCov: return "cov";
    case DecorrMode::kInprod: return "inprod";
    case DecorrMode::kBoth: return "both";
  }
  return "cov";
}

DecorrMode parse_decorr_mode(const std::string& text) {
  if (text == "cov") return DecorrMode::kCov;
  if (text == "inprod") return DecorrMode::kInprod;
  if (text == "both") return DecorrMode::kBoth;
  throw Error(ErrorCode::kInvalidConfig, "unknown decorrelation mode '" + text + "'");
}

namespace {

bool uses_cov(DecorrMode mode) { return mode != DecorrMode::kInprod; }
bool uses_inprod(DecorrMode mode) { return mode != DecorrMode::kCov; }

}  // namespace

CorrelationMatrices correlation_matrices(const Matrix& features, const Vector& weights,
                                         DecorrMode mode, bool inprod_symmetric) {
  const Matrix weighted = reweight(features, weights);
  CorrelationMatrices out;
  out.mode = mode;
  if (uses_cov(mode)) out.cov = covariance_matrix(weighted);
  if (uses_inprod(mode)) {
    out.inprod = inprod_symmetric ? inner_product_matrix(weighted, weighted)
                                  : inner_product_matrix(features, weighted);
  }
  return out;
}

double off_diagonal_abs_sum(const Matrix& m) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (r != c) total += std::abs(m(r, c));
    }
  }
  return total;
}

double decorrelation_loss(const CorrelationMatrices& matrices) {
  double loss = 0.0;
  if (uses_cov(matrices.mode)) loss += off_diagonal_abs_sum(matrices.cov);
  if (uses_inprod(matrices.mode)) loss += off_diagonal_abs_sum(matrices.inprod);
  return loss;
}

WeightState WeightState::uniform(int size) {
  return WeightState(Vector::Zero(size));
}

WeightState WeightState::from_weights(const Vector& weights) {
  if ((weights.array() <= 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "weights must be positive");
  }
  // Inverse softplus: v = log(expm1(u)).
  return WeightState(weights.unaryExpr([](double u) {
    return u > 30.0 ? u + std::log1p(-std::exp(-u)) : std::log(std::expm1(u));
  }));
}

Vector WeightState::weights() const {
  const Eigen::Index size = raw_.size();
  if (size == 0) return {};
  const Vector s = raw_.unaryExpr([](double v) { return softplus(v); });
  const double total = s.sum();
  Vector u = s * (static_cast<double>(size) / total);
  // One renormalization pass absorbs the rounding of the first division.
  u *= static_cast<double>(size) / u.sum();
  return u;
}

DecorrObjective::DecorrObjective(const Matrix& features, DecorrMode mode, bool inprod_symmetric)
    : mode_(mode), symmetric_(inprod_symmetric) {
  const Eigen::Index rows = features.rows();
  if (uses_cov(mode)) {
    // cov(u_i o_i, u_j o_j) = u_i u_j cov(o_i, o_j), so the unweighted
    // covariance is enough.
    cov_abs_ = covariance_matrix(features).cwiseAbs();
    cov_abs_.diagonal().setZero();
  } else {
    cov_abs_ = Matrix::Zero(rows, rows);
  }
  if (uses_inprod(mode)) {
    inprod_abs_ = (features * features.transpose()).cwiseAbs();
    inprod_abs_.diagonal().setZero();
    inprod_col_ = inprod_abs_.colwise().sum().transpose();
  }
}

double DecorrObjective::loss(const Vector& u) const {
  double loss = 0.0;
  if (uses_cov(mode_)) loss += u.dot(cov_abs_ * u);
  if (uses_inprod(mode_)) {
    loss += symmetric_ ? u.dot(inprod_abs_ * u) : inprod_col_.dot(u);
  }
  return loss;
}

Vector DecorrObjective::grad_weights(const Vector& u) const {
  Vector g = Vector::Zero(u.size());
  if (uses_cov(mode_)) g += 2.0 * (cov_abs_ * u);
  if (uses_inprod(mode_)) {
    if (symmetric_) {
      g += 2.0 * (inprod_abs_ * u);
    } else {
      g += inprod_col_;
    }
  }
  return g;
}

Vector DecorrObjective::grad_raw(const WeightState& state) const {
  const Vector& v = state.raw();
  const double size = static_cast<double>(v.size());
  const Vector s = v.unaryExpr([](double x) { return softplus(x); });
  const double total = s.sum();
  const Vector u = s * (size / total);
  const Vector gu = grad_weights(u);
  // du_i/dv_k = (L / S) * sigmoid(v_k) * (delta_ik - s_i / S)
  const double mean_term = gu.dot(u) / size;
  Vector out(v.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    out[k] = sigmoid(v[k]) * (size / total) * (gu[k] - mean_term);
  }
  return out;
}

Vector decorrelation_grad(const Matrix& features, const WeightState& state, DecorrMode mode,
                          bool inprod_symmetric) {
  if (features.rows() != state.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "weight state size differs from row count");
  }
  const DecorrObjective objective(features, mode, inprod_symmetric);
  Vector grad = objective.grad_raw(state);
  if (!grad.allFinite()) {
    throw Error(ErrorCode::kNumericFailure, "non-finite decorrelation gradient");
  }
  return grad;
}

bool weights_satisfy_constraint(const Vector& weights, double tol) {
  if (weights.size() == 0) return true;
  return std::abs(weights.sum() - static_cast<double>(weights.size())) <= tol &&
         weights.minCoeff() > 0.0;
}

DecorrResult optimize_weights(const Matrix& features, const WeightState& init,
                              const DecorrOptions& opts) {
  if (opts.steps < 0) throw Error(ErrorCode::kInvalidConfig, "decorrelation steps must be >= 0");
  if (features.rows() != init.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "weight state size differs from row count");
  }
  constexpr int kMaxHalvings = 10;

  DecorrResult result;
  result.state = init;
  if (init.size() == 0) return result;

  const DecorrObjective objective(features, opts.mode, opts.inprod_symmetric);
  double current = objective.loss(result.state.weights());
  if (!std::isfinite(current)) {
    throw Error(ErrorCode::kNumericFailure, "non-finite decorrelation loss");
  }
  result.initial_loss = current;

  for (int step = 0; step < opts.steps; ++step) {
    const Vector grad = objective.grad_raw(result.state);
    if (!grad.allFinite()) {
      throw Error(ErrorCode::kNumericFailure, "non-finite decorrelation gradient");
    }
    double lr = opts.lr;
    bool accepted = false;
    for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
      WeightState trial(result.state.raw() - lr * grad);
      const double trial_loss = objective.loss(trial.weights());
      if (std::isfinite(trial_loss) && trial_loss <= current) {
        result.state = std::move(trial);
        current = trial_loss;
        accepted = true;
        break;
      }
      if (attempt < kMaxHalvings) {
        lr *= 0.5;
        ++result.halvings;
      }
    }
    if (!accepted) ++result.rejected_steps;

    ++result.constraint_checks;
    if (!weights_satisfy_constraint(result.state.weights())) ++result.constraint_violations;
  }
  result.final_loss = current;
  return result;
}

}  // namespace cimil
