// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctdet/geometry.hpp"

namespace ctdet::image {

// Interleaved 8-bit image, row-major, c in {1, 3}.
struct ImageU8 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h_, int w_, int c_, uint8_t fill = 0)
      : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

  uint8_t& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
  uint8_t at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
  bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
};

// Binary PPM (P6) / PGM (P5). Used for dataset images: lossless, trivially
// deterministic.
void write_pnm(const std::string& path, const ImageU8& img);
ImageU8 read_pnm(const std::string& path);

// 24-bit uncompressed BMP for visualizations (no metadata, byte-stable).
void write_bmp(const std::string& path, const ImageU8& img);

ImageU8 resize_bilinear(const ImageU8& src, int new_h, int new_w);

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, Rgb color);
void draw_polygon(ImageU8& img, const geometry::QuadBox& q, Rgb color);
void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1, Rgb color);

// 5x7 bitmap glyphs for digits, uppercase letters and ".-=:%" — enough for
// chart labels.
void draw_text(ImageU8& img, int x, int y, const std::string& text, Rgb color);
int text_width(const std::string& text);

// Map a value in [0,1] to a heat color (black -> red -> yellow -> white).
Rgb heat_color(double v);

}  // namespace ctdet::image
