#include "cdnn/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdnn/errors.hpp"

namespace cdnn {

namespace {

inline float sample_bilinear(const float* plane, int h, int w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(sy);
  const int x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  const double v00 = plane[static_cast<std::size_t>(y0) * w + x0];
  const double v01 = plane[static_cast<std::size_t>(y0) * w + x1];
  const double v10 = plane[static_cast<std::size_t>(y1) * w + x0];
  const double v11 = plane[static_cast<std::size_t>(y1) * w + x1];
  return static_cast<float>((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                            fy * ((1.0 - fx) * v10 + fx * v11));
}

void resize_plane(const float* src, int h, int w, float* dst, int oh, int ow) {
  const double ry = static_cast<double>(h) / oh;
  const double rx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) * ry - 0.5;
    for (int x = 0; x < ow; ++x) {
      const double sx = (x + 0.5) * rx - 0.5;
      dst[static_cast<std::size_t>(y) * ow + x] = sample_bilinear(src, h, w, sy, sx);
    }
  }
}

}  // namespace

GrayImage bilinear_resize(const GrayImage& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw NumericError("bilinear_resize: target extents must be >= 1");
  GrayImage out(out_h, out_w);
  resize_plane(img.v.data(), img.h, img.w, out.v.data(), out_h, out_w);
  return out;
}

RgbImage bilinear_resize(const RgbImage& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw NumericError("bilinear_resize: target extents must be >= 1");
  RgbImage out(out_h, out_w);
  const std::size_t src_plane = static_cast<std::size_t>(img.h) * img.w;
  const std::size_t dst_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < 3; ++c)
    resize_plane(img.data.data() + c * src_plane, img.h, img.w,
                 out.data.data() + c * dst_plane, out_h, out_w);
  return out;
}

Mask resize_mask(const Mask& mask, int out_h, int out_w) {
  GrayImage soft(mask.h, mask.w);
  for (std::size_t i = 0; i < mask.v.size(); ++i) soft.v[i] = mask.v[i] ? 1.f : 0.f;
  const GrayImage resized = bilinear_resize(soft, out_h, out_w);
  Mask out(out_h, out_w);
  for (std::size_t i = 0; i < resized.v.size(); ++i) out.v[i] = resized.v[i] >= 0.5f ? 1 : 0;
  return out;
}

RgbImage rgb_to_hsv(const RgbImage& img) {
  RgbImage out(img.h, img.w);
  const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.data[i];
    const double g = img.data[n + i];
    const double b = img.data[2 * n + i];
    const double maxc = std::max({r, g, b});
    const double minc = std::min({r, g, b});
    const double delta = maxc - minc;
    double h = 0.0;
    if (delta > 0.0) {
      if (maxc == r) h = std::fmod((g - b) / delta, 6.0);
      else if (maxc == g) h = (b - r) / delta + 2.0;
      else h = (r - g) / delta + 4.0;
      h /= 6.0;
      if (h < 0.0) h += 1.0;
    }
    const double s = maxc > 0.0 ? delta / maxc : 0.0;
    out.data[i] = static_cast<float>(h);
    out.data[n + i] = static_cast<float>(s);
    out.data[2 * n + i] = static_cast<float>(maxc);
  }
  return out;
}

namespace {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

}  // namespace

GrayImage rgb_to_lab_l(const RgbImage& img) {
  GrayImage out(img.h, img.w);
  const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
  constexpr double kDelta = 6.0 / 29.0;
  constexpr double kDelta3 = kDelta * kDelta * kDelta;
  for (std::size_t i = 0; i < n; ++i) {
    const double rl = srgb_to_linear(img.data[i]);
    const double gl = srgb_to_linear(img.data[n + i]);
    const double bl = srgb_to_linear(img.data[2 * n + i]);
    // Relative luminance Y with D65 white, Yn = 1.
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double f = y > kDelta3 ? std::cbrt(y) : y / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
    const double l_star = 116.0 * f - 16.0;
    out.v[i] = static_cast<float>(std::clamp(l_star / 100.0, 0.0, 1.0));
  }
  return out;
}

namespace {

/// Percentile of a sorted array with linear interpolation between ranks.
double percentile_sorted(const std::vector<float>& sorted, double pct) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = pct / 100.0 * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

void percentile_normalize_channel(std::span<float> values, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0))
    throw NumericError(msg("percentile window [", lo_pct, ",", hi_pct, "] is not ordered"));
  if (values.empty()) return;
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile_sorted(sorted, lo_pct);
  const double hi = percentile_sorted(sorted, hi_pct);
  if (!(hi > lo)) {
    // Degenerate (near-)constant channel: equally uninformative everywhere.
    std::fill(values.begin(), values.end(), 0.f);
    return;
  }
  const double inv = 1.0 / (hi - lo);
  for (float& v : values)
    v = static_cast<float>(std::clamp((static_cast<double>(v) - lo) * inv, 0.0, 1.0));
}

GrayImage percentile_contrast_normalize(const GrayImage& channel, double lo_pct,
                                        double hi_pct) {
  GrayImage out = channel;
  percentile_normalize_channel(out.v, lo_pct, hi_pct);
  return out;
}

Tensor<float> compose_input(const RgbImage& img, int out_h, int out_w) {
  const RgbImage rgb = (img.h == out_h && img.w == out_w) ? img
                                                          : bilinear_resize(img, out_h, out_w);
  const RgbImage hsv = rgb_to_hsv(rgb);
  const GrayImage l = rgb_to_lab_l(rgb);

  Tensor<float> out({7, out_h, out_w});
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  std::copy(rgb.data.begin(), rgb.data.end(), out.data());                // R,G,B
  std::copy(hsv.data.begin(), hsv.data.end(), out.data() + 3 * plane);    // H,S,V
  std::copy(l.v.begin(), l.v.end(), out.data() + 6 * plane);              // L
  return out;
}

GeomTransform sample_transform(const AugmentationConfig& cfg, Rng& rng, int h, int w) {
  GeomTransform t;
  t.flip_h = rng.bernoulli(cfg.flip_h_prob);
  t.flip_v = rng.bernoulli(cfg.flip_v_prob);
  t.shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * h;
  t.shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * w;
  t.rotate_deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
  t.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  return t;
}

namespace {

bool is_identity(const GeomTransform& t) {
  return !t.flip_h && !t.flip_v && t.shift_y == 0.0 && t.shift_x == 0.0 &&
         t.rotate_deg == 0.0 && t.scale == 1.0;
}

/// Maps each destination pixel back to source coordinates of the inverse
/// transform. Forward model: flip about center, scale, rotate, then shift.
struct InverseMap {
  double cy, cx, cos_t, sin_t, inv_scale, shift_y, shift_x;
  bool flip_h, flip_v;

  InverseMap(const GeomTransform& t, int h, int w)
      : cy((h - 1) / 2.0),
        cx((w - 1) / 2.0),
        cos_t(std::cos(-t.rotate_deg * std::numbers::pi / 180.0)),
        sin_t(std::sin(-t.rotate_deg * std::numbers::pi / 180.0)),
        inv_scale(1.0 / t.scale),
        shift_y(t.shift_y),
        shift_x(t.shift_x),
        flip_h(t.flip_h),
        flip_v(t.flip_v) {}

  std::pair<double, double> operator()(int y, int x) const {
    const double dy = (y - cy) - shift_y;
    const double dx = (x - cx) - shift_x;
    double sy = (cos_t * dy - sin_t * dx) * inv_scale;
    double sx = (sin_t * dy + cos_t * dx) * inv_scale;
    if (flip_v) sy = -sy;
    if (flip_h) sx = -sx;
    return {sy + cy, sx + cx};
  }
};

void transform_plane(const float* src, int h, int w, float* dst, const InverseMap& inv) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [sy, sx] = inv(y, x);
      float v = 0.f;
      if (sy >= 0.0 && sy <= h - 1 && sx >= 0.0 && sx <= w - 1)
        v = sample_bilinear(src, h, w, sy, sx);
      dst[static_cast<std::size_t>(y) * w + x] = v;
    }
  }
}

}  // namespace

Tensor<float> apply_geometric(const Tensor<float>& channels, const GeomTransform& t) {
  if (channels.rank() != 3) throw NumericError("apply_geometric: input must be (C,H,W)");
  if (is_identity(t)) return channels;
  const int ch = channels.extent(0), h = channels.extent(1), w = channels.extent(2);
  const InverseMap inv(t, h, w);
  Tensor<float> out(channels.shape());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < ch; ++c)
    transform_plane(channels.data() + c * plane, h, w, out.data() + c * plane, inv);
  return out;
}

GrayImage apply_geometric(const GrayImage& img, const GeomTransform& t, bool binarize) {
  if (is_identity(t)) return img;
  const InverseMap inv(t, img.h, img.w);
  GrayImage out(img.h, img.w);
  transform_plane(img.v.data(), img.h, img.w, out.v.data(), inv);
  if (binarize)
    for (float& v : out.v) v = v >= 0.5f ? 1.f : 0.f;
  return out;
}

std::pair<Tensor<float>, GrayImage> augment_geometric(const Tensor<float>& input,
                                                      const GrayImage& mask,
                                                      const AugmentationConfig& cfg, Rng& rng) {
  if (input.rank() != 3 || input.extent(1) != mask.h || input.extent(2) != mask.w)
    throw NumericError("augment_geometric: input and mask extents differ");
  const GeomTransform t = sample_transform(cfg, rng, mask.h, mask.w);
  return {apply_geometric(input, t), apply_geometric(mask, t, /*binarize=*/true)};
}

Tensor<float> augment_contrast(const Tensor<float>& input, const AugmentationConfig& cfg,
                               Rng& rng) {
  if (input.rank() != 3) throw NumericError("augment_contrast: input must be (C,H,W)");
  Tensor<float> out = input;
  const int ch = input.extent(0);
  const std::size_t plane = static_cast<std::size_t>(input.extent(1)) * input.extent(2);
  for (int c = 0; c < ch; ++c) {
    const double lo = rng.uniform(cfg.contrast_lo_min, cfg.contrast_lo_max);
    const double hi = rng.uniform(cfg.contrast_hi_min, cfg.contrast_hi_max);
    percentile_normalize_channel({out.data() + c * plane, plane}, lo, hi);
  }
  return out;
}

}  // namespace cdnn
