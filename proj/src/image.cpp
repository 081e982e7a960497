// SPDX-License-Identifier: Apache-2.0
#include "ctdet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ctdet/common.hpp"

namespace ctdet::image {

void write_pnm(const std::string& path, const ImageU8& img) {
  if (img.c != 1 && img.c != 3) throw DataError("write_pnm: channels must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_pnm: cannot open " + path);
  f << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!f) throw DataError("write_pnm: write failed for " + path);
}

namespace {

int pnm_read_int(std::istream& in) {
  int ch = in.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#')
      while (ch != '\n' && ch != EOF) ch = in.get();
    ch = in.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw DataError("read_pnm: malformed header");
  return value;
}

}  // namespace

ImageU8 read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_pnm: cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) throw DataError("read_pnm: not a P5/P6 file: " + path);
  int w = pnm_read_int(f);
  int h = pnm_read_int(f);
  int maxval = pnm_read_int(f);
  if (maxval != 255) throw DataError("read_pnm: only maxval 255 supported: " + path);
  ImageU8 img(h, w, m1 == '6' ? 3 : 1);
  f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.data.size()))
    throw DataError("read_pnm: truncated pixel data: " + path);
  return img;
}

void write_bmp(const std::string& path, const ImageU8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_bmp: cannot open " + path);
  int row_bytes = (img.w * 3 + 3) / 4 * 4;
  uint32_t pixel_bytes = static_cast<uint32_t>(row_bytes) * img.h;
  uint32_t file_size = 54 + pixel_bytes;
  uint8_t header[54] = {};
  header[0] = 'B';
  header[1] = 'M';
  auto put32 = [&](int off, uint32_t v) {
    header[off] = v & 0xff;
    header[off + 1] = (v >> 8) & 0xff;
    header[off + 2] = (v >> 16) & 0xff;
    header[off + 3] = (v >> 24) & 0xff;
  };
  put32(2, file_size);
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<uint32_t>(img.w));
  put32(22, static_cast<uint32_t>(img.h));
  header[26] = 1;
  header[28] = 24;
  put32(34, pixel_bytes);
  put32(38, 2835);
  put32(42, 2835);
  f.write(reinterpret_cast<const char*>(header), 54);
  std::vector<uint8_t> row(row_bytes, 0);
  for (int y = img.h - 1; y >= 0; --y) {
    for (int x = 0; x < img.w; ++x) {
      uint8_t r, g, b;
      if (img.c == 1) {
        r = g = b = img.at(y, x, 0);
      } else {
        r = img.at(y, x, 0);
        g = img.at(y, x, 1);
        b = img.at(y, x, 2);
      }
      row[x * 3 + 0] = b;
      row[x * 3 + 1] = g;
      row[x * 3 + 2] = r;
    }
    f.write(reinterpret_cast<const char*>(row.data()), row_bytes);
  }
  if (!f) throw DataError("write_bmp: write failed for " + path);
}

ImageU8 resize_bilinear(const ImageU8& src, int new_h, int new_w) {
  ImageU8 out(new_h, new_w, src.c);
  double sy = static_cast<double>(src.h) / new_h;
  double sx = static_cast<double>(src.w) / new_w;
  for (int y = 0; y < new_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, src.h - 1);
    int yb = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < new_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, src.w - 1);
      int xb = std::clamp(x0 + 1, 0, src.w - 1);
      for (int ch = 0; ch < src.c; ++ch) {
        double v = (1 - wy) * ((1 - wx) * src.at(ya, xa, ch) + wx * src.at(ya, xb, ch)) +
                   wy * ((1 - wx) * src.at(yb, xa, ch) + wx * src.at(yb, xb, ch));
        out.at(y, x, ch) = static_cast<uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  }
  return out;
}

namespace {

void put_pixel(ImageU8& img, int x, int y, Rgb color) {
  if (!img.in_bounds(y, x)) return;
  if (img.c == 1) {
    img.at(y, x, 0) = static_cast<uint8_t>((color.r + color.g + color.b) / 3);
  } else {
    img.at(y, x, 0) = color.r;
    img.at(y, x, 1) = color.g;
    img.at(y, x, 2) = color.b;
  }
}

}  // namespace

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, Rgb color) {
  int ix0 = static_cast<int>(std::lround(x0)), iy0 = static_cast<int>(std::lround(y0));
  int ix1 = static_cast<int>(std::lround(x1)), iy1 = static_cast<int>(std::lround(y1));
  int dx = std::abs(ix1 - ix0), dy = -std::abs(iy1 - iy0);
  int sx = ix0 < ix1 ? 1 : -1, sy = iy0 < iy1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, ix0, iy0, color);
    if (ix0 == ix1 && iy0 == iy1) break;
    int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      ix0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      iy0 += sy;
    }
  }
}

void draw_polygon(ImageU8& img, const geometry::QuadBox& q, Rgb color) {
  const auto& v = q.vertices();
  for (int i = 0; i < 4; ++i)
    draw_line(img, v[i].x, v[i].y, v[(i + 1) % 4].x, v[(i + 1) % 4].y, color);
}

void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1, Rgb color) {
  for (int y = std::max(0, y0); y <= std::min(img.h - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(img.w - 1, x1); ++x)
      put_pixel(img, x, y, color);
}

namespace {

// Each glyph: 7 rows of 5 bits, msb = leftmost column.
struct Glyph {
  char ch;
  uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
};

const Glyph* find_glyph(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const Glyph& g : kFont)
    if (g.ch == ch) return &g;
  return nullptr;
}

}  // namespace

void draw_text(ImageU8& img, int x, int y, const std::string& text, Rgb color) {
  int cx = x;
  for (char ch : text) {
    if (ch == ' ') {
      cx += 6;
      continue;
    }
    const Glyph* g = find_glyph(ch);
    if (g) {
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g->rows[r] & (1 << (4 - col))) put_pixel(img, cx + col, y + r, color);
    }
    cx += 6;
  }
}

int text_width(const std::string& text) { return static_cast<int>(text.size()) * 6; }

Rgb heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto lerp = [](double a, double b, double t) {
    return static_cast<uint8_t>(std::lround(a + (b - a) * t));
  };
  if (v < 1.0 / 3) {
    double t = v * 3;
    return {lerp(0, 255, t), 0, 0};
  }
  if (v < 2.0 / 3) {
    double t = (v - 1.0 / 3) * 3;
    return {255, lerp(0, 255, t), 0};
  }
  double t = (v - 2.0 / 3) * 3;
  return {255, 255, lerp(0, 255, t)};
}

}  // namespace ctdet::image
