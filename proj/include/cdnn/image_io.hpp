#pragma once

#include <filesystem>
#include <utility>

#include "cdnn/image.hpp"

namespace cdnn {

/// Decodes an 8-bit PNG or JPEG (sniffed by magic bytes) into [0,1] RGB.
/// Grayscale and palette inputs are expanded; alpha is dropped.
RgbImage read_rgb_image(const std::filesystem::path& path);

/// Decodes a mask image into [0,1] gray (RGB inputs are averaged).
GrayImage read_gray_image(const std::filesystem::path& path);

/// (height, width) from the file header without decoding pixel data.
std::pair<int, int> read_image_extents(const std::filesystem::path& path);

/// 8-bit grayscale PNG, value = round(255 * v).
void write_gray_png(const std::filesystem::path& path, const GrayImage& img);

/// 8-bit grayscale PNG with 0 = background, 255 = lesion.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace cdnn
