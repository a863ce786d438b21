#pragma once

#include "cdnn/tensor.hpp"

namespace cdnn {

/// Smoothing constant added to numerator and denominator of the Jaccard
/// distance so the loss is defined when target and prediction are both all
/// zero. smooth = 1 preserves the loss-zero-iff-equal property on binary
/// inputs up to the smoothing itself.
struct JaccardLossConfig {
  double smooth = 1.0;
};

namespace detail {

template <typename T>
struct JaccardSums {
  double inter;  // sum t*p
  double denom;  // sum t^2 + sum p^2 - sum t*p
};

template <typename T>
JaccardSums<T> jaccard_sums(const Tensor<T>& target, const Tensor<T>& pred, const char* op) {
  check_same_shape(target, pred, op);
  double tp = 0.0, tt = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double t = static_cast<double>(target[i]);
    const double p = static_cast<double>(pred[i]);
    if (t != 0.0 && t != 1.0)
      throw NumericError(msg(op, ": target value ", t, " is not binary"));
    tp += t * p;
    tt += t * t;
    pp += p * p;
  }
  return {tp, tt + pp - tp};
}

}  // namespace detail

/// Jaccard distance between a binary target map and a probability map:
/// 1 - (sum t*p + s) / (sum t^2 + sum p^2 - sum t*p + s). Lies in [0,1] and
/// needs no foreground/background re-weighting.
template <typename T>
double jaccard_loss(const Tensor<T>& target, const Tensor<T>& pred,
                    const JaccardLossConfig& cfg = {}) {
  const auto s = detail::jaccard_sums(target, pred, "jaccard_loss");
  const double loss = 1.0 - (s.inter + cfg.smooth) / (s.denom + cfg.smooth);
  if (!std::isfinite(loss)) throw NumericError("jaccard_loss: non-finite loss");
  return loss;
}

/// Analytic dL/dp. With N = sum t*p + s and D = sum t^2 + sum p^2 - sum t*p + s:
/// dL/dp_i = -(t_i * D - N * (2 p_i - t_i)) / D^2.
template <typename T>
Tensor<T> jaccard_loss_grad(const Tensor<T>& target, const Tensor<T>& pred,
                            const JaccardLossConfig& cfg = {}) {
  const auto s = detail::jaccard_sums(target, pred, "jaccard_loss_grad");
  const double numer = s.inter + cfg.smooth;
  const double denom = s.denom + cfg.smooth;
  const double inv_d2 = 1.0 / (denom * denom);
  Tensor<T> grad(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = static_cast<double>(target[i]);
    const double p = static_cast<double>(pred[i]);
    grad[i] = static_cast<T>(-(t * denom - numer * (2.0 * p - t)) * inv_d2);
  }
  ensure_all_finite(grad, "jaccard_loss_grad");
  return grad;
}

}  // namespace cdnn
