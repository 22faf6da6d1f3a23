#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/nn/layers.hpp"

namespace lobforge::nn {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update of `param` in place. `step` is the 1-based
// index of this update.
inline void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                        std::size_t step, const AdamHyper& h) {
  if (grad.size() != param.size()) throw InvariantError("adam: gradient/parameter size mismatch");
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  if (moments.m.size() != param.size()) throw InvariantError("adam: moment/parameter size mismatch");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    moments.m[i] = h.beta1 * moments.m[i] + (1.0 - h.beta1) * grad[i];
    moments.v[i] = h.beta2 * moments.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double m_hat = moments.m[i] / c1;
    const double v_hat = moments.v[i] / c2;
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

class Adam {
 public:
  Adam(ParamList params, AdamHyper hyper = {}) : params_(std::move(params)), hyper_(hyper), moments_(params_.size()) {}

  // Applies one update from the accumulated gradients; parameters that
  // received no gradient are treated as having a zero gradient.
  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_[i].tensor;
      if (t.grad().empty()) {
        std::vector<double> zeros(t.size(), 0.0);
        adam_update(t.data(), zeros, moments_[i], step_, hyper_);
      } else {
        adam_update(t.data(), t.grad(), moments_[i], step_, hyper_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t steps() const { return step_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  ParamList params_;
  AdamHyper hyper_;
  std::vector<AdamMoments> moments_;
  std::size_t step_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParamList& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (p.tensor.grad().empty()) continue;
      for (double& g : p.tensor.grad_buffer()) g *= s;
    }
  }
  return norm;
}

}  // namespace lobforge::nn
