// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "diffsim/backend.hpp"
#include "diffsim/errors.hpp"

namespace diffsim {

namespace {

const char* kPalette[] = {"#3366cc", "#dc3912", "#ff9900", "#109618",
                          "#990099", "#0099c6", "#dd4477", "#66aa00",
                          "#b82e2e", "#316395"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

void write_line_chart_svg(const std::filesystem::path& path,
                          const std::string& title,
                          const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<PlotSeries>& series,
                          const std::vector<std::string>& x_tick_labels) {
  constexpr double W = 800, H = 500;
  constexpr double ml = 70, mr = 160, mt = 50, mb = 60;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymin -= 0.05;
    ymax += 0.05;
  }
  // breathing room on y
  const double ypad = (ymax - ymin) * 0.08;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write plot: " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
     << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"16\">" << xml_escape(title)
     << "</text>\n";

  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";

  // y ticks
  for (int i = 0; i <= 5; ++i) {
    const double y = ymin + (ymax - ymin) * i / 5.0;
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(y) << "\" x2=\""
       << ml + pw << "\" y2=\"" << py(y)
       << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(y) << "</text>\n";
  }
  // x ticks
  if (!x_tick_labels.empty()) {
    for (std::size_t i = 0; i < x_tick_labels.size(); ++i) {
      const double x = static_cast<double>(i);
      if (x < xmin || x > xmax) continue;
      os << "<text x=\"" << px(x) << "\" y=\"" << mt + ph + 18
         << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            "font-size=\"11\">"
         << xml_escape(x_tick_labels[i]) << "</text>\n";
    }
  } else {
    for (int i = 0; i <= 6; ++i) {
      const double x = xmin + (xmax - xmin) * i / 6.0;
      os << "<text x=\"" << px(x) << "\" y=\"" << mt + ph + 18
         << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            "font-size=\"11\">"
         << fmt(x) << "</text>\n";
    }
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">"
     << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\" transform=\"rotate(-90 18 "
     << mt + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  // series
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(*kPalette))];
    if (!series[s].points.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"2\" points=\"";
      for (const auto& [x, y] : series[s].points)
        os << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
      os << "\"/>\n";
      for (const auto& [x, y] : series[s].points)
        os << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y))
           << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = mt + 16 + 18 * static_cast<double>(s);
    os << "<line x1=\"" << ml + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\""
       << ml + pw + 32 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw + 38 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << xml_escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("short write: " + path.string());
}

void write_contact_sheet_png(const std::filesystem::path& path,
                             const std::vector<std::filesystem::path>& images,
                             int tile, int columns) {
  if (images.empty()) throw ConfigError("contact sheet: no images");
  constexpr int pad = 6;
  constexpr int label_h = 14;
  const int cols = std::min<int>(columns, static_cast<int>(images.size()));
  const int rows =
      (static_cast<int>(images.size()) + cols - 1) / cols;

  Image sheet;
  sheet.width = cols * (tile + pad) + pad;
  sheet.height = rows * (tile + pad + label_h) + pad;
  sheet.rgb.assign(
      static_cast<std::size_t>(sheet.width) * sheet.height * 3, 255);

  for (std::size_t i = 0; i < images.size(); ++i) {
    const int r = static_cast<int>(i) / cols;
    const int c = static_cast<int>(i) % cols;
    const int x0 = pad + c * (tile + pad);
    const int y0 = pad + r * (tile + pad + label_h);
    const Image img = standard_preprocess(load_image(images[i]), tile);
    for (int y = 0; y < tile; ++y)
      for (int x = 0; x < tile; ++x)
        for (int ch = 0; ch < 3; ++ch)
          sheet.at(x0 + x, y0 + y, ch) = img.at(x, y, ch);
    // rank marker: i+1 dark ticks under the tile
    const int ticks = static_cast<int>(i) + 1;
    for (int t = 0; t < ticks && t < tile / 6; ++t)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 4; ++x) {
          const int sx = x0 + t * 6 + x;
          const int sy = y0 + tile + 3 + y;
          sheet.at(sx, sy, 0) = 40;
          sheet.at(sx, sy, 1) = 40;
          sheet.at(sx, sy, 2) = 40;
        }
  }
  save_png(path, sheet);
}

}  // namespace diffsim
