#pragma once

#include <cmath>
#include <cstddef>

#include "regrelax/nn/tensor.hpp"

namespace regrelax::nn {

struct AdamHyper {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

// First/second moment buffers for one parameter tensor. Moments start at
// zero and updates are bias corrected.
class AdamMoments {
 public:
  AdamMoments() = default;
  explicit AdamMoments(const Shape& shape) : m_(shape, 0.0), v_(shape, 0.0) {}

  // Returns the bias-corrected step direction m̂/(√v̂+ε) for `grad`; the
  // caller scales it by the learning rate. `step` is 1-based.
  Tensor direction(const Tensor& grad, std::size_t step, const AdamHyper& h) {
    Tensor dir(grad.shape());
    const Real c1 = 1.0 - std::pow(h.beta1, static_cast<Real>(step));
    const Real c2 = 1.0 - std::pow(h.beta2, static_cast<Real>(step));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = h.beta1 * m_[i] + (1.0 - h.beta1) * grad[i];
      v_[i] = h.beta2 * v_[i] + (1.0 - h.beta2) * grad[i] * grad[i];
      dir[i] = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + h.eps);
    }
    return dir;
  }

  const Tensor& first() const { return m_; }
  const Tensor& second() const { return v_; }

 private:
  Tensor m_;
  Tensor v_;
};

}  // namespace regrelax::nn
