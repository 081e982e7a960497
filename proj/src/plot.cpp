// SPDX-License-Identifier: Apache-2.0
#include "ctdet/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctdet/common.hpp"
#include "ctdet/image.hpp"

namespace ctdet::plot {

namespace fs = std::filesystem;
using image::ImageU8;
using image::Rgb;

namespace {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // numeric cells; NaN for non-numeric
};

Table read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open csv: " + path);
  Table t;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      t.columns = cells;
      header = false;
      continue;
    }
    std::vector<double> row;
    for (const std::string& c : cells) {
      char* end = nullptr;
      double v = std::strtod(c.c_str(), &end);
      row.push_back(end != c.c_str() && *end == '\0' ? v : std::nan(""));
    }
    row.resize(t.columns.size(), std::nan(""));
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw DataError("csv has no header: " + path);
  return t;
}

constexpr Rgb kSeriesColors[] = {{220, 60, 60},  {60, 120, 220}, {50, 170, 90},
                                 {230, 160, 40}, {160, 80, 200}, {60, 190, 190}};

struct ChartFrame {
  int width = 640, height = 420;
  int left = 56, right = 16, top = 20, bottom = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const {
    return left + (x - x0) / (x1 - x0 + 1e-300) * (width - left - right);
  }
  double py(double y) const {
    return height - bottom - (y - y0) / (y1 - y0 + 1e-300) * (height - top - bottom);
  }
};

std::string format_tick(double v) {
  char buf[32];
  if (std::abs(v) >= 1000 || (std::abs(v) < 0.01 && v != 0))
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  else
    std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void draw_frame(ImageU8& img, const ChartFrame& f) {
  Rgb axis{60, 60, 60};
  image::draw_line(img, f.left, f.top, f.left, f.height - f.bottom, axis);
  image::draw_line(img, f.left, f.height - f.bottom, f.width - f.right, f.height - f.bottom,
                   axis);
  for (int i = 0; i <= 4; ++i) {
    double vx = f.x0 + (f.x1 - f.x0) * i / 4.0;
    double vy = f.y0 + (f.y1 - f.y0) * i / 4.0;
    int gx = static_cast<int>(f.px(vx));
    int gy = static_cast<int>(f.py(vy));
    image::draw_line(img, gx, f.height - f.bottom, gx, f.height - f.bottom + 4, axis);
    image::draw_line(img, f.left - 4, gy, f.left, gy, axis);
    image::draw_text(img, gx - image::text_width(format_tick(vx)) / 2,
                     f.height - f.bottom + 8, format_tick(vx), axis);
    image::draw_text(img, f.left - 6 - image::text_width(format_tick(vy)), gy - 3,
                     format_tick(vy), axis);
  }
}

void draw_series(ImageU8& img, const ChartFrame& f, const std::vector<double>& xs,
                 const std::vector<double>& ys, Rgb color) {
  for (size_t i = 1; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i - 1]) || !std::isfinite(ys[i])) continue;
    image::draw_line(img, f.px(xs[i - 1]), f.py(ys[i - 1]), f.px(xs[i]), f.py(ys[i]), color);
  }
}

void plot_series_chart(const std::vector<std::string>& names,
                       const std::vector<double>& xs,
                       const std::vector<std::vector<double>>& series,
                       const std::string& out_path, double y_min_hint = 0.0) {
  if (xs.empty()) throw DataError("plot: no data rows");
  ChartFrame f;
  f.x0 = *std::min_element(xs.begin(), xs.end());
  f.x1 = *std::max_element(xs.begin(), xs.end());
  if (f.x1 == f.x0) f.x1 = f.x0 + 1;
  double ymin = y_min_hint, ymax = -1e300;
  for (const auto& s : series)
    for (double v : s)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
  if (ymax <= ymin) ymax = ymin + 1;
  f.y0 = ymin;
  f.y1 = ymax * 1.05;

  ImageU8 img(f.height, f.width, 3, 255);
  draw_frame(img, f);
  for (size_t s = 0; s < series.size(); ++s) {
    Rgb color = kSeriesColors[s % std::size(kSeriesColors)];
    draw_series(img, f, xs, series[s], color);
    int ly = f.top + static_cast<int>(s) * 12;
    image::fill_rect(img, f.width - f.right - 120, ly, f.width - f.right - 110, ly + 7, color);
    image::draw_text(img, f.width - f.right - 106, ly, names[s], {40, 40, 40});
  }
  image::write_bmp(out_path, img);
}

}  // namespace

void plot_loss_curves(const std::string& log_csv_path, const std::string& out_path) {
  Table t = read_csv(log_csv_path);
  int step_col = -1;
  std::vector<int> loss_cols;
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i] == "step") step_col = static_cast<int>(i);
    if (t.columns[i].rfind("l_", 0) == 0) loss_cols.push_back(static_cast<int>(i));
  }
  if (step_col < 0 || loss_cols.empty())
    throw DataError("loss log missing step/l_* columns: " + log_csv_path);
  std::vector<double> xs;
  std::vector<std::vector<double>> series(loss_cols.size());
  std::vector<std::string> names;
  for (int c : loss_cols) names.push_back(t.columns[c]);
  for (const auto& row : t.rows) {
    xs.push_back(row[step_col]);
    for (size_t s = 0; s < loss_cols.size(); ++s) series[s].push_back(row[loss_cols[s]]);
  }
  plot_series_chart(names, xs, series, out_path);
}

void plot_f1_vs_iou(const std::string& table_csv_path, const std::string& out_path) {
  Table t = read_csv(table_csv_path);
  int thr_col = -1;
  std::vector<int> cols;
  std::vector<std::string> names;
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i] == "iou_threshold") thr_col = static_cast<int>(i);
    if (t.columns[i] == "precision" || t.columns[i] == "recall" || t.columns[i] == "f1") {
      cols.push_back(static_cast<int>(i));
      names.push_back(t.columns[i]);
    }
  }
  if (thr_col < 0 || cols.empty())
    throw DataError("sweep table missing columns: " + table_csv_path);
  std::vector<double> xs;
  std::vector<std::vector<double>> series(cols.size());
  for (const auto& row : t.rows) {
    xs.push_back(row[thr_col]);
    for (size_t s = 0; s < cols.size(); ++s) series[s].push_back(row[cols[s]]);
  }
  plot_series_chart(names, xs, series, out_path);
}

void render_target_overlays(const targets::AnnotatedImage& sample,
                            const targets::TargetMaps& maps, const std::string& out_dir,
                            const std::string& prefix) {
  fs::create_directories(out_dir);
  int h = maps.h, w = maps.w;

  ImageU8 heat(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Rgb c = image::heat_color(maps.contour[static_cast<size_t>(y) * w + x]);
      heat.at(y, x, 0) = c.r;
      heat.at(y, x, 1) = c.g;
      heat.at(y, x, 2) = c.b;
    }
  image::write_bmp((fs::path(out_dir) / (prefix + "_contour.bmp")).string(), heat);

  // Score overlay at input resolution: dimmed image, score region tinted,
  // annotation quads outlined.
  ImageU8 overlay(sample.img.h, sample.img.w, 3);
  for (int y = 0; y < sample.img.h; ++y)
    for (int x = 0; x < sample.img.w; ++x) {
      size_t map_idx = static_cast<size_t>(y / 4) * w + (x / 4);
      bool pos = map_idx < maps.score.size() && maps.score[map_idx] == 1.0f;
      bool ign = map_idx < maps.ignore.size() && maps.ignore[map_idx] == 1.0f;
      for (int c = 0; c < 3; ++c) {
        int v = sample.img.at(y, x, sample.img.c == 3 ? c : 0) / 2;
        if (pos && c == 1) v = std::min(255, v + 110);
        if (ign && c == 0) v = std::min(255, v + 110);
        overlay.at(y, x, c) = static_cast<uint8_t>(v);
      }
    }
  for (const auto& inst : sample.instances)
    image::draw_polygon(overlay, inst.quad, inst.dont_care ? Rgb{255, 80, 80} : Rgb{80, 160, 255});
  image::write_bmp((fs::path(out_dir) / (prefix + "_score.bmp")).string(), overlay);

  std::ofstream csv((fs::path(out_dir) / (prefix + "_contour_values.csv")).string(),
                    std::ios::binary);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.2f", maps.contour[static_cast<size_t>(y) * w + x]);
      csv << buf << (x + 1 < w ? "," : "");
    }
    csv << "\n";
  }
}

}  // namespace ctdet::plot
