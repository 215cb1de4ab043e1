#pragma once

#include "cimil/common.hpp"

namespace cimil {

/// Heavy-ball SGD over a flat parameter vector:
///   velocity <- momentum * velocity + grad
///   params   <- params - lr * velocity
class MomentumSgd {
 public:
  MomentumSgd(Eigen::Index size, double lr, double momentum)
      : lr_(lr), momentum_(momentum), velocity_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& grad) {
    velocity_ = momentum_ * velocity_ + grad;
    params.noalias() -= lr_ * velocity_;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  Vector velocity_;
};

}  // namespace cimil
