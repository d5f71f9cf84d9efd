#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "drbert/autodiff.hpp"
#include "drbert/error.hpp"
#include "drbert/rng.hpp"
#include "drbert/tensor.hpp"

namespace drbert {

enum class InitScheme { kUniformFanIn, kZeros };

/// Weights draw from U[-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in the
/// leading dimension (the input width under the x*W convention); biases are
/// zero.
inline Tensor seeded_init(const Shape& shape, InitScheme scheme, Rng& rng) {
  if (shape.empty()) throw ValidationError("seeded_init: empty shape");
  Tensor t(shape);
  if (scheme == InitScheme::kZeros) return t;
  double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

inline void zero_grads(const std::vector<ad::Var>& params) {
  for (const auto& p : params) p->zero_grad();
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step
/// and must keep matching the parameter shapes afterwards.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : opt_(options) {}

  const AdamOptions& options() const noexcept { return opt_; }
  std::size_t step_count() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  /// Parameters with no gradient buffer are treated as having zero gradient.
  void step(const std::vector<ad::Var>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) {
      throw DimensionError("adam: tracking " + std::to_string(m_.size()) + " parameters, got " +
                           std::to_string(params.size()));
    }
    ++t_;
    double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      ad::Node& p = *params[k];
      if (p.value.shape() != m_[k].shape()) {
        throw DimensionError("adam: parameter " + std::to_string(k) + " has shape " +
                             shape_str(p.value.shape()) + ", moments have " + shape_str(m_[k].shape()));
      }
      if (p.grad.empty()) continue;
      if (p.grad.shape() != p.value.shape()) {
        throw DimensionError("adam: gradient shape " + shape_str(p.grad.shape()) + " vs parameter " +
                             shape_str(p.value.shape()));
      }
      auto w = p.value.data();
      auto g = p.grad.data();
      auto m = m_[k].data();
      auto v = v_[k].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
        w[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      }
    }
  }

 private:
  AdamOptions opt_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Central-difference gradient check. `loss` rebuilds the scalar graph from
/// the current parameter values. Returns
///   max |analytic - numeric| / (|analytic| + 1e-8)
/// over every entry of every parameter.
inline double finite_difference_check(const std::function<ad::Var()>& loss, const std::vector<ad::Var>& params,
                                      double eps = 1e-5) {
  if (!(eps > 0.0)) throw ValidationError("finite_difference_check: eps must be positive");
  zero_grads(params);
  ad::Var root = loss();
  if (!root->value.all_finite()) throw NumericError("finite_difference_check: loss is not finite");
  ad::backward(root);
  root.reset();

  double worst = 0.0;
  for (const auto& p : params) {
    Tensor analytic = p->grad.empty() ? Tensor(p->value.shape()) : p->grad;
    auto w = p->value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double saved = w[i];
      w[i] = saved + eps;
      double up = loss()->value.item();
      w[i] = saved - eps;
      double down = loss()->value.item();
      w[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_difference_check: loss is not finite at perturbed point of " + p->name);
      }
      double numeric = (up - down) / (2.0 * eps);
      double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace drbert
