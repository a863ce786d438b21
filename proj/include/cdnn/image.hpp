#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cdnn/rng.hpp"
#include "cdnn/tensor.hpp"

namespace cdnn {

/// Planar 3-channel image, values in [0,1], channel-major like the tensors.
struct RgbImage {
  int h = 0, w = 0;
  std::vector<float> data;  // 3*h*w

  RgbImage() = default;
  RgbImage(int height, int width)
      : h(height), w(width), data(static_cast<std::size_t>(3) * height * width, 0.f) {}
  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * h + y) * w + x];
  }
};

/// Single-channel real image in [0,1]; also used for probability maps and
/// soft masks.
struct GrayImage {
  int h = 0, w = 0;
  std::vector<float> v;

  GrayImage() = default;
  GrayImage(int height, int width)
      : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0.f) {}
  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// Hard binary mask: 0 background, 1 lesion.
struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int height, int width)
      : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0) {}
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::int64_t area() const {
    std::int64_t n = 0;
    for (auto b : v) n += b;
    return n;
  }
};

// ---- resampling ----------------------------------------------------------

/// Bilinear resize with the half-pixel-center convention:
/// src = (dst + 0.5) * (src_extent / dst_extent) - 0.5, clamped to the frame.
GrayImage bilinear_resize(const GrayImage& img, int out_h, int out_w);
RgbImage bilinear_resize(const RgbImage& img, int out_h, int out_w);

/// Resize a binary mask: bilinear on the soft values, then threshold at 0.5.
Mask resize_mask(const Mask& mask, int out_h, int out_w);

// ---- color spaces -----------------------------------------------------------

/// RGB -> HSV with H scaled from its angular range into [0,1); S, V in [0,1].
RgbImage rgb_to_hsv(const RgbImage& img);

/// sRGB -> linear -> XYZ (D65) -> CIELAB L*, scaled from [0,100] into [0,1].
GrayImage rgb_to_lab_l(const RgbImage& img);

// ---- contrast ---------------------------------------------------------------

/// Affine rescale mapping the lo percentile to 0 and the hi percentile to 1,
/// then clip to [0,1]. A constant channel maps to all zeros.
void percentile_normalize_channel(std::span<float> values, double lo_pct, double hi_pct);
GrayImage percentile_contrast_normalize(const GrayImage& channel, double lo_pct,
                                        double hi_pct);

// ---- network input ------------------------------------------------------------

/// Resize to (out_h, out_w) and stack the 7 input channels in the order
/// R, G, B, H, S, V, L. Deterministic; no augmentation here.
Tensor<float> compose_input(const RgbImage& img, int out_h = 192, int out_w = 256);

// ---- augmentation ---------------------------------------------------------------

struct AugmentationConfig {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  double shift_frac = 0.10;   // +- fraction of each extent
  double rotate_deg = 20.0;   // +- degrees
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  // Percentile window jitter for contrast augmentation.
  double contrast_lo_min = 0.0;
  double contrast_lo_max = 10.0;
  double contrast_hi_min = 90.0;
  double contrast_hi_max = 100.0;
};

/// One sampled rigid-plus-scale transform, applied about the image center.
struct GeomTransform {
  bool flip_h = false, flip_v = false;
  double shift_y = 0.0, shift_x = 0.0;  // pixels
  double rotate_deg = 0.0;
  double scale = 1.0;
};

GeomTransform sample_transform(const AugmentationConfig& cfg, Rng& rng, int h, int w);

/// Applies one transform identically to every channel of a (C,H,W) tensor
/// and, when given, to the mask (re-binarized at 0.5). Out-of-frame regions
/// fill with zero. The identity transform is a bitwise no-op.
Tensor<float> apply_geometric(const Tensor<float>& channels, const GeomTransform& t);
GrayImage apply_geometric(const GrayImage& img, const GeomTransform& t, bool binarize);

std::pair<Tensor<float>, GrayImage> augment_geometric(const Tensor<float>& input,
                                                      const GrayImage& mask,
                                                      const AugmentationConfig& cfg, Rng& rng);

/// Per channel independently: sample a percentile window from the configured
/// jitter ranges and re-normalize the channel contrast to it.
Tensor<float> augment_contrast(const Tensor<float>& input, const AugmentationConfig& cfg,
                               Rng& rng);

}  // namespace cdnn
