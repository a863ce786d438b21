#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdnn/tensor.hpp"

namespace cdnn {

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for one set of parameter tensors, in the same
/// order as the parameter list they were built from.
template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static AdamState init_like(const std::vector<Tensor<T>*>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor<T>* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update over a parameter list. Gradients must be
/// conformal to the parameters; a non-finite gradient aborts the step and
/// names the offending tensor.
template <typename T>
void adam_step(AdamState<T>& state, const AdamConfig& cfg, const std::vector<Tensor<T>*>& params,
               const std::vector<Tensor<T>>& grads, const std::vector<std::string>& names) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw NumericError("adam_step: parameter/gradient/state arity mismatch");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    if (!p.same_shape(g))
      throw NumericError(msg("adam_step: gradient shape ", shape_str(g.shape()),
                             " does not match parameter ",
                             k < names.size() ? names[k] : std::to_string(k)));
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi))
        throw NumericError(msg("adam_step: non-finite gradient in ",
                               k < names.size() ? names[k] : std::to_string(k)));
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

}  // namespace cdnn
