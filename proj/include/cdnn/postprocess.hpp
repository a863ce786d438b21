#pragma once

#include <optional>
#include <vector>

#include "cdnn/image.hpp"

namespace cdnn {

/// 8-connected components of a binary map. Labels are dense 1..count with 0
/// for background; per-region pixel counts and probability mass (when a
/// probability map accompanies the binary map) are recorded alongside.
struct LabeledRegions {
  int h = 0, w = 0;
  int count = 0;
  std::vector<int> labels;           // h*w, 0 = background
  std::vector<std::int64_t> pixels;  // [count], pixel count per region
  std::vector<double> mass;          // [count], sum of probabilities per region

  int label_at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
};

LabeledRegions connected_components(const Mask& binary, const GrayImage* prob = nullptr);

struct Pixel {
  int y = 0, x = 0;
};

/// Centroid of the largest-mass region above th_h, rounded to the nearest
/// pixel; empty when no pixel reaches th_h. Mass and centroid are
/// probability-weighted.
std::optional<Pixel> tumor_center(const GrayImage& prob, double th_h);

/// Morphological closing (dilate then erode) with a disk of the given
/// radius. Closing is extensive: the output always contains the input.
Mask fill_holes(const Mask& binary, int radius);

struct DualThresholdConfig {
  double th_h = 0.8;
  double th_l = 0.5;
  int fill_radius = 2;  // disk radius at the 192x256 working scale
};

/// The dual-thresholds mask extraction: find the tumor center at th_h, apply
/// th_l, close small holes, and keep the th_l component embracing the
/// center. With no center, the largest-mass th_l component is kept; an
/// all-but-empty map yields an empty mask. The result is always one
/// 8-connected component or empty.
Mask dual_threshold_mask(const GrayImage& prob, const DualThresholdConfig& cfg);

/// Upsamples the probability map to the source resolution bilinearly, then
/// extracts the mask there. The fill radius scales with the mean resize
/// factor so hole filling matches its behavior at the working scale.
Mask resize_mask_to_source(const GrayImage& prob, int src_h, int src_w,
                           const DualThresholdConfig& cfg);

}  // namespace cdnn
