#pragma once

#include <cstdint>
#include <tuple>
#include <utility>

#include "cdnn/rng.hpp"
#include "cdnn/tensor.hpp"

namespace cdnn {

enum class Mode { train, infer };

/// Zero padding applied around the spatial extents. "same" resolves to the
/// asymmetric split that preserves extents at stride 1: (k-1)/2 before and
/// k/2 after, i.e. (1,1) for 3x3 kernels and (1,2) for 4x4 kernels.
struct Padding {
  enum class Kind { same, explicit_pad } kind = Kind::same;
  int top = 0, left = 0, bottom = 0, right = 0;

  static Padding same() { return {}; }
  static Padding explicit_pad(int t, int l, int b, int r) {
    return {Kind::explicit_pad, t, l, b, r};
  }

  std::tuple<int, int, int, int> resolve(int kh, int kw) const {
    if (kind == Kind::same) return {(kh - 1) / 2, (kw - 1) / 2, kh / 2, kw / 2};
    return {top, left, bottom, right};
  }
};

/// Convolution / deconvolution parameters.
///
/// Weight layout: conv stores (out_ch, in_ch, kh, kw); deconv stores
/// (in_ch, out_ch, kh, kw). With that convention deconv2d_forward with a
/// kernel buffer K is exactly the adjoint of conv2d_forward with K, which is
/// what the adjoint-identity tests check.
template <typename T>
struct ConvParams {
  Tensor<T> weights;
  Tensor<T> bias;
  int stride_h = 1, stride_w = 1;  // only stride 1 appears in this network
  Padding padding = Padding::same();
};

namespace detail {

struct ConvDims {
  int in_ch, out_ch, kh, kw, pt, pl, pb, pr, in_h, in_w, out_h, out_w;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const ConvParams<T>& p, bool transposed,
                   const char* op) {
  if (p.stride_h != 1 || p.stride_w != 1)
    throw NumericError(msg(op, ": only stride 1 is supported"));
  if (x.rank() != 4) throw NumericError(msg(op, ": input must be 4-D, got ", shape_str(x.shape())));
  if (p.weights.rank() != 4)
    throw NumericError(msg(op, ": weights must be 4-D, got ", shape_str(p.weights.shape())));

  ConvDims d{};
  d.kh = p.weights.extent(2);
  d.kw = p.weights.extent(3);
  d.out_ch = transposed ? p.weights.extent(1) : p.weights.extent(0);
  d.in_ch = transposed ? p.weights.extent(0) : p.weights.extent(1);
  d.in_h = x.extent(2);
  d.in_w = x.extent(3);
  std::tie(d.pt, d.pl, d.pb, d.pr) = p.padding.resolve(d.kh, d.kw);
  if (transposed) {
    // Transposed op grows by kernel-1 and the padding crops it back.
    d.out_h = d.in_h + d.kh - 1 - d.pt - d.pb;
    d.out_w = d.in_w + d.kw - 1 - d.pl - d.pr;
  } else {
    d.out_h = d.in_h + d.pt + d.pb - d.kh + 1;
    d.out_w = d.in_w + d.pl + d.pr - d.kw + 1;
  }

  if (x.extent(1) != d.in_ch)
    throw NumericError(msg(op, ": input has ", x.extent(1), " channels, weights expect ", d.in_ch));
  if (d.out_h < 1 || d.out_w < 1)
    throw NumericError(msg(op, ": output extent ", d.out_h, "x", d.out_w, " below 1"));
  if (p.bias.size() != static_cast<std::size_t>(d.out_ch))
    throw NumericError(msg(op, ": bias has ", p.bias.size(), " elements, expected ", d.out_ch));
  return d;
}

/// y[oc][oy][ox] += sum_{ic,ky,kx} w[oc][ic][ky][kx] * x[ic][oy+ky-pt][ox+kx-pl]
/// for one image. The inner loop runs over a contiguous ox range so it
/// vectorizes; edge clipping is hoisted out of the loop. Each output channel
/// is written by exactly one thread, so results are bit-identical for any
/// thread count.
template <typename T>
void conv_gather_one(const T* x, int x_ch, int x_h, int x_w, const T* w, int y_ch, int kh,
                     int kw, int pt, int pl, T* y, int y_h, int y_w) {
  const std::size_t x_plane = static_cast<std::size_t>(x_h) * x_w;
  const std::size_t y_plane = static_cast<std::size_t>(y_h) * y_w;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < y_ch; ++oc) {
    T* yc = y + static_cast<std::size_t>(oc) * y_plane;
    for (int ic = 0; ic < x_ch; ++ic) {
      const T* xc = x + static_cast<std::size_t>(ic) * x_plane;
      const T* wk = w + (static_cast<std::size_t>(oc) * x_ch + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const T wv = wk[ky * kw + kx];
          const int ox_lo = std::max(0, pl - kx);
          const int ox_hi = std::min(y_w, x_w + pl - kx);
          for (int oy = 0; oy < y_h; ++oy) {
            const int iy = oy + ky - pt;
            if (iy < 0 || iy >= x_h) continue;
            T* yrow = yc + static_cast<std::size_t>(oy) * y_w;
            const T* xrow = xc + static_cast<std::size_t>(iy) * x_w + (kx - pl);
            for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
          }
        }
      }
    }
  }
}

/// Adjoint of conv_gather_one with the same kernel buffer:
/// r[ic][iy][ix] += sum_{oc,ky,kx} w[oc][ic][ky][kx] * z[oc][iy-ky+pt][ix-kx+pl].
/// Written as a gather over r so each element has exactly one writer.
template <typename T>
void conv_scatter_one(const T* z, int z_ch, int z_h, int z_w, const T* w, int r_ch, int kh,
                      int kw, int pt, int pl, T* r, int r_h, int r_w) {
  const std::size_t z_plane = static_cast<std::size_t>(z_h) * z_w;
  const std::size_t r_plane = static_cast<std::size_t>(r_h) * r_w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < r_ch; ++ic) {
    T* rc = r + static_cast<std::size_t>(ic) * r_plane;
    for (int oc = 0; oc < z_ch; ++oc) {
      const T* zc = z + static_cast<std::size_t>(oc) * z_plane;
      const T* wk = w + (static_cast<std::size_t>(oc) * r_ch + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const T wv = wk[ky * kw + kx];
          const int ix_lo = std::max(0, kx - pl);
          const int ix_hi = std::min(r_w, z_w + kx - pl);
          for (int iy = 0; iy < r_h; ++iy) {
            const int oy = iy - ky + pt;
            if (oy < 0 || oy >= z_h) continue;
            T* rrow = rc + static_cast<std::size_t>(iy) * r_w;
            const T* zrow = zc + static_cast<std::size_t>(oy) * z_w + (pl - kx);
            for (int ix = ix_lo; ix < ix_hi; ++ix) rrow[ix] += wv * zrow[ix];
          }
        }
      }
    }
  }
}

/// gw[oc][ic][ky][kx] += sum_{oy,ox} gy[oc][oy][ox] * x[ic][oy+ky-pt][ox+kx-pl]
/// for one image; callers loop the batch sequentially so the accumulation
/// order is fixed.
template <typename T>
void conv_gradw_one(const T* x, int x_ch, int x_h, int x_w, const T* gy, int gy_ch, int gy_h,
                    int gy_w, int kh, int kw, int pt, int pl, T* gw) {
  const std::size_t x_plane = static_cast<std::size_t>(x_h) * x_w;
  const std::size_t gy_plane = static_cast<std::size_t>(gy_h) * gy_w;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < gy_ch; ++oc) {
    const T* gyc = gy + static_cast<std::size_t>(oc) * gy_plane;
    for (int ic = 0; ic < x_ch; ++ic) {
      const T* xc = x + static_cast<std::size_t>(ic) * x_plane;
      T* gwk = gw + (static_cast<std::size_t>(oc) * x_ch + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const int ox_lo = std::max(0, pl - kx);
          const int ox_hi = std::min(gy_w, x_w + pl - kx);
          T acc = T(0);
          for (int oy = 0; oy < gy_h; ++oy) {
            const int iy = oy + ky - pt;
            if (iy < 0 || iy >= x_h) continue;
            const T* gyrow = gyc + static_cast<std::size_t>(oy) * gy_w;
            const T* xrow = xc + static_cast<std::size_t>(iy) * x_w + (kx - pl);
            for (int ox = ox_lo; ox < ox_hi; ++ox) acc += gyrow[ox] * xrow[ox];
          }
          gwk[ky * kw + kx] += acc;
        }
      }
    }
  }
}

}  // namespace detail

// ---- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvParams<T>& p) {
  const auto d = detail::conv_dims(x, p, false, "conv2d");
  const int batch = x.extent(0);
  Tensor<T> y({batch, d.out_ch, d.out_h, d.out_w});
  const std::size_t y_img = y.size() / static_cast<std::size_t>(batch);
  const std::size_t x_img = x.size() / static_cast<std::size_t>(batch);
  const std::size_t y_plane = static_cast<std::size_t>(d.out_h) * d.out_w;
  for (int n = 0; n < batch; ++n) {
    T* yn = y.data() + static_cast<std::size_t>(n) * y_img;
    for (int oc = 0; oc < d.out_ch; ++oc)
      std::fill(yn + oc * y_plane, yn + (oc + 1) * y_plane, p.bias[static_cast<std::size_t>(oc)]);
    detail::conv_gather_one(x.data() + static_cast<std::size_t>(n) * x_img, d.in_ch, d.in_h,
                            d.in_w, p.weights.data(), d.out_ch, d.kh, d.kw, d.pt, d.pl, yn,
                            d.out_h, d.out_w);
  }
  ensure_all_finite(y, "conv2d_forward");
  return y;
}

/// Gradients of a scalar loss w.r.t. conv input, weights and bias.
template <typename T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> conv2d_backward(const Tensor<T>& x,
                                                            const ConvParams<T>& p,
                                                            const Tensor<T>& grad_out) {
  const auto d = detail::conv_dims(x, p, false, "conv2d_backward");
  const int batch = x.extent(0);
  if (grad_out.shape() != Shape{batch, d.out_ch, d.out_h, d.out_w})
    throw NumericError(msg("conv2d_backward: grad shape ", shape_str(grad_out.shape()),
                           " does not match output shape"));

  Tensor<T> gx(x.shape());
  Tensor<T> gw(p.weights.shape());
  Tensor<T> gb(p.bias.shape());
  const std::size_t x_img = x.size() / static_cast<std::size_t>(batch);
  const std::size_t y_img = grad_out.size() / static_cast<std::size_t>(batch);
  const std::size_t y_plane = static_cast<std::size_t>(d.out_h) * d.out_w;

  for (int n = 0; n < batch; ++n) {
    const T* gyn = grad_out.data() + static_cast<std::size_t>(n) * y_img;
    const T* xn = x.data() + static_cast<std::size_t>(n) * x_img;
    detail::conv_scatter_one(gyn, d.out_ch, d.out_h, d.out_w, p.weights.data(), d.in_ch, d.kh,
                             d.kw, d.pt, d.pl, gx.data() + static_cast<std::size_t>(n) * x_img,
                             d.in_h, d.in_w);
    detail::conv_gradw_one(xn, d.in_ch, d.in_h, d.in_w, gyn, d.out_ch, d.out_h, d.out_w, d.kh,
                           d.kw, d.pt, d.pl, gw.data());
    for (int oc = 0; oc < d.out_ch; ++oc)
      gb[static_cast<std::size_t>(oc)] +=
          detail::pairwise_sum(gyn + static_cast<std::size_t>(oc) * y_plane, y_plane);
  }
  ensure_all_finite(gx, "conv2d_backward");
  ensure_all_finite(gw, "conv2d_backward");
  return {std::move(gx), std::move(gw), std::move(gb)};
}

// ---- transposed convolution -------------------------------------------------

/// Transposed convolution (deconvolution) at stride 1. Same padding keeps the
/// spatial extents; upsampling is a separate layer.
template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const ConvParams<T>& p) {
  const auto d = detail::conv_dims(x, p, true, "deconv2d");
  const int batch = x.extent(0);
  Tensor<T> y({batch, d.out_ch, d.out_h, d.out_w});
  const std::size_t y_img = y.size() / static_cast<std::size_t>(batch);
  const std::size_t x_img = x.size() / static_cast<std::size_t>(batch);
  const std::size_t y_plane = static_cast<std::size_t>(d.out_h) * d.out_w;
  for (int n = 0; n < batch; ++n) {
    T* yn = y.data() + static_cast<std::size_t>(n) * y_img;
    for (int oc = 0; oc < d.out_ch; ++oc)
      std::fill(yn + oc * y_plane, yn + (oc + 1) * y_plane, p.bias[static_cast<std::size_t>(oc)]);
    // Forward of the transposed op is the adjoint gather.
    detail::conv_scatter_one(x.data() + static_cast<std::size_t>(n) * x_img, d.in_ch, d.in_h,
                             d.in_w, p.weights.data(), d.out_ch, d.kh, d.kw, d.pt, d.pl, yn,
                             d.out_h, d.out_w);
  }
  ensure_all_finite(y, "deconv2d_forward");
  return y;
}

template <typename T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> deconv2d_backward(const Tensor<T>& x,
                                                              const ConvParams<T>& p,
                                                              const Tensor<T>& grad_out) {
  const auto d = detail::conv_dims(x, p, true, "deconv2d_backward");
  const int batch = x.extent(0);
  if (grad_out.shape() != Shape{batch, d.out_ch, d.out_h, d.out_w})
    throw NumericError(msg("deconv2d_backward: grad shape ", shape_str(grad_out.shape()),
                           " does not match output shape"));

  Tensor<T> gx(x.shape());
  Tensor<T> gw(p.weights.shape());
  Tensor<T> gb(p.bias.shape());
  const std::size_t x_img = x.size() / static_cast<std::size_t>(batch);
  const std::size_t y_img = grad_out.size() / static_cast<std::size_t>(batch);
  const std::size_t y_plane = static_cast<std::size_t>(d.out_h) * d.out_w;

  for (int n = 0; n < batch; ++n) {
    const T* gyn = grad_out.data() + static_cast<std::size_t>(n) * y_img;
    const T* xn = x.data() + static_cast<std::size_t>(n) * x_img;
    // Adjoint of an adjoint: the input gradient is the plain gather.
    detail::conv_gather_one(gyn, d.out_ch, d.out_h, d.out_w, p.weights.data(), d.in_ch, d.kh,
                            d.kw, d.pt, d.pl, gx.data() + static_cast<std::size_t>(n) * x_img,
                            d.in_h, d.in_w);
    // Same bilinear form as the conv weight gradient with x and gy swapped.
    detail::conv_gradw_one(gyn, d.out_ch, d.out_h, d.out_w, xn, d.in_ch, d.in_h, d.in_w, d.kh,
                           d.kw, d.pt, d.pl, gw.data());
    for (int oc = 0; oc < d.out_ch; ++oc)
      gb[static_cast<std::size_t>(oc)] +=
          detail::pairwise_sum(gyn + static_cast<std::size_t>(oc) * y_plane, y_plane);
  }
  ensure_all_finite(gx, "deconv2d_backward");
  ensure_all_finite(gw, "deconv2d_backward");
  return {std::move(gx), std::move(gw), std::move(gb)};
}

// ---- max pooling -------------------------------------------------------------

/// 2x2 max pooling, stride 2. Ties break to the first element in row-major
/// scan order so gradient routing is deterministic. Odd extents are an
/// error, never padded implicitly.
template <typename T>
std::pair<Tensor<T>, Tensor<std::uint8_t>> maxpool2x2_forward(const Tensor<T>& x) {
  if (x.rank() != 4) throw NumericError("maxpool2x2: input must be 4-D");
  const int batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h % 2 || w % 2)
    throw NumericError(msg("maxpool2x2: spatial extents ", h, "x", w, " must be even"));
  const int oh = h / 2, ow = w / 2;
  Tensor<T> y({batch, ch, oh, ow});
  Tensor<std::uint8_t> idx({batch, ch, oh, ow});
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < batch * ch; ++nc) {
    const int n = nc / ch, c = nc % ch;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int iy = 2 * oy, ix = 2 * ox;
        T best = x.at(n, c, iy, ix);
        std::uint8_t arg = 0;
        const T cand[3] = {x.at(n, c, iy, ix + 1), x.at(n, c, iy + 1, ix),
                           x.at(n, c, iy + 1, ix + 1)};
        for (std::uint8_t k = 0; k < 3; ++k)
          if (cand[k] > best) {
            best = cand[k];
            arg = static_cast<std::uint8_t>(k + 1);
          }
        y.at(n, c, oy, ox) = best;
        idx.at(n, c, oy, ox) = arg;
      }
    }
  }
  return {std::move(y), std::move(idx)};
}

/// Routes each output gradient to its recorded argmax position.
template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<std::uint8_t>& argmax, const Tensor<T>& grad_out) {
  if (argmax.shape() != grad_out.shape())
    throw NumericError("maxpool2x2_backward: argmax/grad shape mismatch");
  const int batch = grad_out.extent(0), ch = grad_out.extent(1);
  const int oh = grad_out.extent(2), ow = grad_out.extent(3);
  Tensor<T> gx({batch, ch, oh * 2, ow * 2});
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < batch * ch; ++nc) {
    const int n = nc / ch, c = nc % ch;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const std::uint8_t a = argmax.at(n, c, oy, ox);
        gx.at(n, c, 2 * oy + a / 2, 2 * ox + a % 2) = grad_out.at(n, c, oy, ox);
      }
    }
  }
  return gx;
}

// ---- upsampling ----------------------------------------------------------------

/// Nearest-neighbor 2x repetition in both spatial directions.
template <typename T>
Tensor<T> upsample2x2(const Tensor<T>& x) {
  if (x.rank() != 4) throw NumericError("upsample2x2: input must be 4-D");
  const int batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  Tensor<T> y({batch, ch, h * 2, w * 2});
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < batch * ch; ++nc) {
    const int n = nc / ch, c = nc % ch;
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        const T v = x.at(n, c, iy, ix);
        y.at(n, c, 2 * iy, 2 * ix) = v;
        y.at(n, c, 2 * iy, 2 * ix + 1) = v;
        y.at(n, c, 2 * iy + 1, 2 * ix) = v;
        y.at(n, c, 2 * iy + 1, 2 * ix + 1) = v;
      }
    }
  }
  return y;
}

/// Adjoint of repetition: each 2x2 block of grad_out sums into one element.
template <typename T>
Tensor<T> upsample2x2_backward(const Tensor<T>& grad_out) {
  if (grad_out.rank() != 4) throw NumericError("upsample2x2_backward: input must be 4-D");
  const int batch = grad_out.extent(0), ch = grad_out.extent(1);
  const int h = grad_out.extent(2), w = grad_out.extent(3);
  if (h % 2 || w % 2) throw NumericError("upsample2x2_backward: extents must be even");
  Tensor<T> gx({batch, ch, h / 2, w / 2});
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < batch * ch; ++nc) {
    const int n = nc / ch, c = nc % ch;
    for (int oy = 0; oy < h / 2; ++oy) {
      for (int ox = 0; ox < w / 2; ++ox) {
        gx.at(n, c, oy, ox) = grad_out.at(n, c, 2 * oy, 2 * ox) +
                              grad_out.at(n, c, 2 * oy, 2 * ox + 1) +
                              grad_out.at(n, c, 2 * oy + 1, 2 * ox) +
                              grad_out.at(n, c, 2 * oy + 1, 2 * ox + 1);
      }
    }
  }
  return gx;
}

// ---- batch normalization --------------------------------------------------------

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma, beta;                  // (ch), learned scale and shift
  Tensor<T> running_mean, running_var;    // (ch), exponential moving averages
  T momentum = T(0.1);                    // fraction of the new batch statistic
  T epsilon = T(1e-5);
};

template <typename T>
BatchNormParams<T> make_batchnorm(int channels) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::ones({channels});
  p.beta = Tensor<T>({channels});
  p.running_mean = Tensor<T>({channels});
  p.running_var = Tensor<T>::ones({channels});
  return p;
}

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;     // normalized input, (N,C,H,W)
  Tensor<T> inv_std;  // 1/sqrt(var+eps), (C)
};

/// Train mode normalizes each channel over (batch, H, W) with the biased
/// batch variance and folds the batch statistic into the running averages;
/// infer mode uses the running statistics only.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
  if (x.rank() != 4) throw NumericError("batchnorm: input must be 4-D");
  const int batch = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (ch != static_cast<int>(p.gamma.size()))
    throw NumericError(msg("batchnorm: ", ch, " channels vs ", p.gamma.size(), " gammas"));
  const std::size_t m = static_cast<std::size_t>(batch) * h * w;
  if (mode == Mode::train && m < 2)
    throw NumericError("batchnorm: train mode needs at least 2 samples per channel");

  Tensor<T> y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t img = static_cast<std::size_t>(ch) * plane;

  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std = Tensor<T>({ch});
  }

#pragma omp parallel for schedule(static)
  for (int c = 0; c < ch; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      T sum = T(0);
      for (int n = 0; n < batch; ++n)
        sum += detail::pairwise_sum(x.data() + n * img + c * plane, plane);
      mean = sum / static_cast<T>(m);
      T sq = T(0);
      for (int n = 0; n < batch; ++n) {
        const T* px = x.data() + n * img + c * plane;
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = px[i] - mean;
          acc += d * d;
        }
        sq += acc;
      }
      var = sq / static_cast<T>(m);
      p.running_mean[static_cast<std::size_t>(c)] =
          (T(1) - p.momentum) * p.running_mean[static_cast<std::size_t>(c)] + p.momentum * mean;
      p.running_var[static_cast<std::size_t>(c)] =
          (T(1) - p.momentum) * p.running_var[static_cast<std::size_t>(c)] + p.momentum * var;
    } else {
      mean = p.running_mean[static_cast<std::size_t>(c)];
      var = p.running_var[static_cast<std::size_t>(c)];
    }
    const T inv_std = T(1) / std::sqrt(var + p.epsilon);
    const T g = p.gamma[static_cast<std::size_t>(c)];
    const T b = p.beta[static_cast<std::size_t>(c)];
    if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
    for (int n = 0; n < batch; ++n) {
      const T* px = x.data() + n * img + c * plane;
      T* py = y.data() + n * img + c * plane;
      T* ph = cache ? cache->xhat.data() + n * img + c * plane : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xhat = (px[i] - mean) * inv_std;
        if (ph) ph[i] = xhat;
        py[i] = g * xhat + b;
      }
    }
  }
  ensure_all_finite(y, "batchnorm_forward");
  return y;
}

/// Backward through the train-mode normalization (batch statistics are a
/// function of x, so their contribution is included).
template <typename T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> batchnorm_backward(const BatchNormParams<T>& p,
                                                               const BatchNormCache<T>& cache,
                                                               const Tensor<T>& grad_out) {
  const Tensor<T>& xhat = cache.xhat;
  check_same_shape(xhat, grad_out, "batchnorm_backward");
  const int batch = grad_out.extent(0), ch = grad_out.extent(1);
  const int h = grad_out.extent(2), w = grad_out.extent(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t img = static_cast<std::size_t>(ch) * plane;
  const T m = static_cast<T>(static_cast<std::size_t>(batch) * plane);

  Tensor<T> gx(grad_out.shape());
  Tensor<T> ggamma({ch});
  Tensor<T> gbeta({ch});

#pragma omp parallel for schedule(static)
  for (int c = 0; c < ch; ++c) {
    T sum_gy = T(0), sum_gy_xhat = T(0);
    for (int n = 0; n < batch; ++n) {
      const T* pg = grad_out.data() + n * img + c * plane;
      const T* ph = xhat.data() + n * img + c * plane;
      T a = T(0), b = T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        a += pg[i];
        b += pg[i] * ph[i];
      }
      sum_gy += a;
      sum_gy_xhat += b;
    }
    gbeta[static_cast<std::size_t>(c)] = sum_gy;
    ggamma[static_cast<std::size_t>(c)] = sum_gy_xhat;

    const T g = p.gamma[static_cast<std::size_t>(c)];
    const T inv_std = cache.inv_std[static_cast<std::size_t>(c)];
    const T k = g * inv_std;
    const T mean_gy = sum_gy / m;
    const T mean_gy_xhat = sum_gy_xhat / m;
    for (int n = 0; n < batch; ++n) {
      const T* pg = grad_out.data() + n * img + c * plane;
      const T* ph = xhat.data() + n * img + c * plane;
      T* px = gx.data() + n * img + c * plane;
      for (std::size_t i = 0; i < plane; ++i)
        px[i] = k * (pg[i] - mean_gy - ph[i] * mean_gy_xhat);
    }
  }
  ensure_all_finite(gx, "batchnorm_backward");
  return {std::move(gx), std::move(ggamma), std::move(gbeta)};
}

// ---- activations ----------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* px = x.data();
  T* py = y.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.size()); ++i)
    py[i] = px[i] > T(0) ? px[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  check_same_shape(x, grad_out, "relu_backward");
  Tensor<T> gx(x.shape());
  const T* px = x.data();
  const T* pg = grad_out.data();
  T* pq = gx.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.size()); ++i)
    pq[i] = px[i] > T(0) ? pg[i] : T(0);
  return gx;
}

/// Numerically stable logistic; outputs are nudged into the open interval
/// (0,1) so downstream code can rely on strict bounds even in float.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* px = x.data();
  T* py = y.data();
  const T lo = std::nextafter(T(0), T(1));
  const T hi = std::nextafter(T(1), T(0));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.size()); ++i) {
    const T v = px[i];
    T s;
    if (v >= T(0)) {
      s = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T(1) + e);
    }
    py[i] = std::min(std::max(s, lo), hi);
  }
  return y;
}

/// Gradient from the cached forward output: sigma' = y * (1 - y).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  check_same_shape(y, grad_out, "sigmoid_backward");
  Tensor<T> gx(y.shape());
  const T* py = y.data();
  const T* pg = grad_out.data();
  T* pq = gx.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(y.size()); ++i)
    pq[i] = pg[i] * py[i] * (T(1) - py[i]);
  return gx;
}

// ---- dropout ----------------------------------------------------------------------

struct DropoutParams {
  double rate = 0.5;
  Mode mode = Mode::train;
};

/// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
/// inference is the identity map. The keep mask is returned for backward and
/// is reproducible under a fixed seed.
template <typename T>
std::pair<Tensor<T>, Tensor<std::uint8_t>> dropout(const Tensor<T>& x, const DropoutParams& p,
                                                   Rng& rng) {
  if (p.rate < 0.0 || p.rate >= 1.0)
    throw NumericError(msg("dropout: rate ", p.rate, " outside [0,1)"));
  Tensor<std::uint8_t> mask(x.shape());
  Tensor<T> y(x.shape());
  if (p.mode == Mode::infer || p.rate == 0.0) {
    std::fill(mask.begin(), mask.end(), std::uint8_t(1));
    std::copy(x.begin(), x.end(), y.begin());
    return {std::move(y), std::move(mask)};
  }
  const T scale = T(1) / static_cast<T>(1.0 - p.rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = rng.next_double() >= p.rate;
    mask[i] = keep ? 1 : 0;
    y[i] = keep ? x[i] * scale : T(0);
  }
  return {std::move(y), std::move(mask)};
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<std::uint8_t>& mask, double rate,
                           const Tensor<T>& grad_out) {
  if (mask.shape() != grad_out.shape())
    throw NumericError("dropout_backward: mask/grad shape mismatch");
  const T scale = T(1) / static_cast<T>(1.0 - rate);
  Tensor<T> gx(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    gx[i] = mask[i] ? grad_out[i] * scale : T(0);
  return gx;
}

}  // namespace cdnn
