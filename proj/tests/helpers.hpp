// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "diffsim/image.hpp"
#include "diffsim/rng.hpp"

namespace testutil {

// Self-deleting scratch directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("diffsim-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline diffsim::Image random_image(std::uint64_t seed, int w, int h) {
  diffsim::Rng rng(seed);
  diffsim::Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

inline std::filesystem::path write_random_ppm(
    const std::filesystem::path& path, std::uint64_t seed, int w = 16,
    int h = 16) {
  diffsim::save_ppm(path, random_image(seed, w, h));
  return path;
}

}  // namespace testutil
