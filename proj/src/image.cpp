// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "diffsim/errors.hpp"

namespace diffsim {

namespace {

Image load_ppm(std::ifstream& in, const std::filesystem::path& path) {
  std::string magic;
  in >> magic;
  auto next_token = [&]() {
    std::string tok;
    for (;;) {
      if (!(in >> tok)) throw IoError("truncated PNM header: " + path.string());
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
  };
  Image img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (img.width < 1 || img.height < 1 || maxval != 255)
    throw IoError("unsupported PNM file (need 8-bit): " + path.string());
  in.get();  // single whitespace before raster
  const std::size_t pixels =
      static_cast<std::size_t>(img.width) * img.height;
  img.rgb.resize(pixels * 3);
  if (magic == "P6") {
    in.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  } else {  // P5 grayscale
    std::vector<std::uint8_t> gray(pixels);
    in.read(reinterpret_cast<char*>(gray.data()),
            static_cast<std::streamsize>(gray.size()));
    for (std::size_t i = 0; i < pixels; ++i)
      img.rgb[3 * i] = img.rgb[3 * i + 1] = img.rgb[3 * i + 2] = gray[i];
  }
  if (!in) throw IoError("truncated PNM raster: " + path.string());
  return img;
}

Image load_png_file(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("failed to decode PNG: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Image img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image load_jpeg_file(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path.string());
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    throw IoError("failed to decode JPEG: " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  Image img;
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) *
                       img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(fp);
  return img;
}

// Catmull-Rom kernel (a = -0.5).
double cubic_weight(double x) {
  x = std::abs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  unsigned char magic[8] = {0};
  in.read(reinterpret_cast<char*>(magic), 8);
  if (!in || in.gcount() < 2)
    throw IoError("unreadable or empty image: " + path.string());
  in.seekg(0);

  if (magic[0] == 'P' && (magic[1] == '6' || magic[1] == '5'))
    return load_ppm(in, path);
  if (magic[0] == 0x89 && magic[1] == 'P') {
    in.close();
    return load_png_file(path);
  }
  if (magic[0] == 0xff && magic[1] == 0xd8) {
    in.close();
    return load_jpeg_file(path);
  }
  throw IoError("unrecognized image format: " + path.string());
}

void save_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("short write: " + path.string());
}

void save_png(const std::filesystem::path& path, const Image& img) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write image: " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed to encode PNG: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(
                           img.rgb.data() +
                           static_cast<std::size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image center_crop_square(const Image& img) {
  const int side = std::min(img.width, img.height);
  const int x0 = (img.width - side) / 2;
  const int y0 = (img.height - side) / 2;
  Image out;
  out.width = out.height = side;
  out.rgb.resize(static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y)
    std::memcpy(out.rgb.data() + static_cast<std::size_t>(y) * side * 3,
                img.rgb.data() +
                    (static_cast<std::size_t>(y + y0) * img.width + x0) * 3,
                static_cast<std::size_t>(side) * 3);
  return out;
}

Image central_crop(const Image& img, double frac) {
  if (frac <= 0.0 || frac > 1.0)
    throw ValidationError("central_crop fraction must be in (0, 1]");
  const int w = std::max(1, static_cast<int>(std::floor(img.width * frac)));
  const int h = std::max(1, static_cast<int>(std::floor(img.height * frac)));
  const int x0 = (img.width - w) / 2;
  const int y0 = (img.height - h) / 2;
  Image out;
  out.width = w;
  out.height = h;
  out.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    std::memcpy(out.rgb.data() + static_cast<std::size_t>(y) * w * 3,
                img.rgb.data() +
                    (static_cast<std::size_t>(y + y0) * img.width + x0) * 3,
                static_cast<std::size_t>(w) * 3);
  return out;
}

Image resize_bicubic(const Image& img, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1)
    throw ValidationError("resize target must be positive");
  if (img.width == out_width && img.height == out_height) return img;

  Image out;
  out.width = out_width;
  out.height = out_height;
  out.rgb.resize(static_cast<std::size_t>(out_width) * out_height * 3);

  const double sx = static_cast<double>(img.width) / out_width;
  const double sy = static_cast<double>(img.height) / out_height;
  auto clampi = [](int v, int lo, int hi) { return std::clamp(v, lo, hi); };

  for (int oy = 0; oy < out_height; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const int iy = static_cast<int>(std::floor(fy));
    double wy[4];
    for (int t = 0; t < 4; ++t) wy[t] = cubic_weight(fy - (iy - 1 + t));
    for (int ox = 0; ox < out_width; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const int ix = static_cast<int>(std::floor(fx));
      double wx[4];
      for (int t = 0; t < 4; ++t) wx[t] = cubic_weight(fx - (ix - 1 + t));
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int ty = 0; ty < 4; ++ty) {
          const int yy = clampi(iy - 1 + ty, 0, img.height - 1);
          double row = 0.0;
          for (int tx = 0; tx < 4; ++tx) {
            const int xx = clampi(ix - 1 + tx, 0, img.width - 1);
            row += wx[tx] * img.at(xx, yy, c);
          }
          acc += wy[ty] * row;
        }
        out.at(ox, oy, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace diffsim
