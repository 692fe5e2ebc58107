// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace diffsim {

// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t at(int x, int y, int c) const {
    return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c];
  }
};

// Decodes PPM (P6/P5), PNG, or JPEG, sniffed by magic bytes.
Image load_image(const std::filesystem::path& path);

void save_ppm(const std::filesystem::path& path, const Image& img);
void save_png(const std::filesystem::path& path, const Image& img);

// Largest centered square (even split bias toward the top-left).
Image center_crop_square(const Image& img);

// Centered crop keeping `frac` of each axis; the crop_subject heuristic.
Image central_crop(const Image& img, double frac);

// Catmull-Rom bicubic, center-aligned sampling, clamped borders.
Image resize_bicubic(const Image& img, int out_width, int out_height);

}  // namespace diffsim
