#include "cdnn/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cdnn/errors.hpp"

namespace cdnn {

LabeledRegions connected_components(const Mask& binary, const GrayImage* prob) {
  if (prob && (prob->h != binary.h || prob->w != binary.w))
    throw NumericError("connected_components: probability map extents differ");
  LabeledRegions out;
  out.h = binary.h;
  out.w = binary.w;
  out.labels.assign(binary.v.size(), 0);

  std::vector<std::size_t> stack;
  for (int sy = 0; sy < binary.h; ++sy) {
    for (int sx = 0; sx < binary.w; ++sx) {
      const std::size_t start = static_cast<std::size_t>(sy) * binary.w + sx;
      if (!binary.v[start] || out.labels[start]) continue;
      const int label = ++out.count;
      out.pixels.push_back(0);
      out.mass.push_back(0.0);
      out.labels[start] = label;
      stack.push_back(start);
      while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        const int y = static_cast<int>(cur / binary.w);
        const int x = static_cast<int>(cur % binary.w);
        out.pixels[label - 1] += 1;
        out.mass[label - 1] += prob ? prob->v[cur] : 1.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= binary.h || nx < 0 || nx >= binary.w) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * binary.w + nx;
            if (binary.v[ni] && !out.labels[ni]) {
              out.labels[ni] = label;
              stack.push_back(ni);
            }
          }
        }
      }
    }
  }
  return out;
}

std::optional<Pixel> tumor_center(const GrayImage& prob, double th_h) {
  Mask high(prob.h, prob.w);
  bool any = false;
  for (std::size_t i = 0; i < prob.v.size(); ++i) {
    high.v[i] = prob.v[i] >= th_h ? 1 : 0;
    any |= high.v[i] != 0;
  }
  if (!any) return std::nullopt;

  const LabeledRegions regions = connected_components(high, &prob);
  int best = 0;
  for (int r = 1; r < regions.count; ++r)
    if (regions.mass[static_cast<std::size_t>(r)] > regions.mass[static_cast<std::size_t>(best)])
      best = r;

  double sum_y = 0.0, sum_x = 0.0, total = 0.0;
  for (int y = 0; y < prob.h; ++y) {
    for (int x = 0; x < prob.w; ++x) {
      if (regions.label_at(y, x) != best + 1) continue;
      const double p = prob.at(y, x);
      sum_y += p * y;
      sum_x += p * x;
      total += p;
    }
  }
  return Pixel{static_cast<int>(std::lround(sum_y / total)),
               static_cast<int>(std::lround(sum_x / total))};
}

namespace {

/// Offsets of a disk of the given radius (dx^2 + dy^2 <= r^2).
std::vector<Pixel> disk_offsets(int radius) {
  std::vector<Pixel> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offs.push_back({dy, dx});
  return offs;
}

Mask dilate(const Mask& in, const std::vector<Pixel>& offs) {
  Mask out(in.h, in.w);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      if (!in.at(y, x)) continue;
      for (const Pixel& o : offs) {
        const int ny = y + o.y, nx = x + o.x;
        if (ny >= 0 && ny < in.h && nx >= 0 && nx < in.w) out.at(ny, nx) = 1;
      }
    }
  }
  return out;
}

Mask erode(const Mask& in, const std::vector<Pixel>& offs) {
  Mask out(in.h, in.w);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      bool all = true;
      for (const Pixel& o : offs) {
        const int ny = y + o.y, nx = x + o.x;
        // Pixels outside the frame count as background for erosion.
        if (ny < 0 || ny >= in.h || nx < 0 || nx >= in.w || !in.at(ny, nx)) {
          all = false;
          break;
        }
      }
      out.at(y, x) = all ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

Mask fill_holes(const Mask& binary, int radius) {
  if (radius <= 0) return binary;
  const std::vector<Pixel> offs = disk_offsets(radius);
  Mask closed = erode(dilate(binary, offs), offs);
  // Erosion at the image border can eat original foreground; restore it so
  // the closing stays extensive on the full frame.
  for (std::size_t i = 0; i < binary.v.size(); ++i)
    if (binary.v[i]) closed.v[i] = 1;
  return closed;
}

Mask dual_threshold_mask(const GrayImage& prob, const DualThresholdConfig& cfg) {
  if (!(cfg.th_l > 0.0 && cfg.th_l <= cfg.th_h && cfg.th_h < 1.0))
    throw NumericError(msg("dual thresholds must satisfy 0 < th_L <= th_H < 1, got th_L=",
                           cfg.th_l, " th_H=", cfg.th_h));
  const std::optional<Pixel> center = tumor_center(prob, cfg.th_h);

  Mask low(prob.h, prob.w);
  bool any = false;
  for (std::size_t i = 0; i < prob.v.size(); ++i) {
    low.v[i] = prob.v[i] >= cfg.th_l ? 1 : 0;
    any |= low.v[i] != 0;
  }
  if (!any) return low;  // empty map -> empty mask

  const Mask filled = fill_holes(low, cfg.fill_radius);
  const LabeledRegions regions = connected_components(filled, &prob);

  // th_h >= th_l, so the tumor center normally lies inside a th_l component.
  // A strongly concave region can still centroid onto background; that case
  // falls back to the largest-mass component, as does a missing center.
  int keep = center ? regions.label_at(center->y, center->x) : 0;
  if (keep == 0) {
    keep = 1;
    for (int r = 2; r <= regions.count; ++r)
      if (regions.mass[static_cast<std::size_t>(r - 1)] >
          regions.mass[static_cast<std::size_t>(keep - 1)])
        keep = r;
  }

  Mask out(prob.h, prob.w);
  for (std::size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = regions.labels[i] == keep ? 1 : 0;
  return out;
}

Mask resize_mask_to_source(const GrayImage& prob, int src_h, int src_w,
                           const DualThresholdConfig& cfg) {
  if (src_h < 1 || src_w < 1)
    throw NumericError("resize_mask_to_source: source extents must be positive");
  if (src_h == prob.h && src_w == prob.w) return dual_threshold_mask(prob, cfg);

  const GrayImage up = bilinear_resize(prob, src_h, src_w);
  DualThresholdConfig scaled = cfg;
  const double factor =
      0.5 * (static_cast<double>(src_h) / prob.h + static_cast<double>(src_w) / prob.w);
  scaled.fill_radius = std::max(cfg.fill_radius > 0 ? 1 : 0,
                                static_cast<int>(std::lround(cfg.fill_radius * factor)));
  return dual_threshold_mask(up, scaled);
}

}  // namespace cdnn
