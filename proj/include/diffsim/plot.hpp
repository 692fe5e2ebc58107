// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffsim/image.hpp"

namespace diffsim {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Deterministic static SVG line chart. When `x_tick_labels` is given the
// x axis is categorical with those labels at integer positions.
void write_line_chart_svg(const std::filesystem::path& path,
                          const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<PlotSeries>& series,
                          const std::vector<std::string>& x_tick_labels = {});

// Square-tiled grid of images in rank order (retrieval contact sheets);
// each tile carries rank tick marks underneath.
void write_contact_sheet_png(const std::filesystem::path& path,
                             const std::vector<std::filesystem::path>& images,
                             int tile = 128, int columns = 5);

}  // namespace diffsim
