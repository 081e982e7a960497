// SPDX-License-Identifier: Apache-2.0
#include "ctdet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace ctdet::datasets {

namespace fs = std::filesystem;
using geometry::QuadBox;
using geometry::Vec2;
using image::ImageU8;

void AugmentConfig::validate() const {
  if (scale_min <= 0.0 || scale_max < scale_min)
    throw ConfigError("augment: bad scale range");
  if (crop_size <= 0 || crop_size % 32 != 0)
    throw ConfigError("augment: crop_size must be a positive multiple of 32");
  if (min_crop_overlap < 0.0 || min_crop_overlap > 1.0)
    throw ConfigError("augment: min_crop_overlap outside [0,1]");
}

void SynthConfig::validate() const {
  if (canvas <= 0 || canvas % 32 != 0)
    throw ConfigError("synth: canvas must be a positive multiple of 32");
  if (words_min < 0 || words_max < words_min) throw ConfigError("synth: bad word count range");
  if (font_height_min <= 0 || font_height_max < font_height_min)
    throw ConfigError("synth: bad font height range");
  if (rotation_range < 0) throw ConfigError("synth: rotation_range must be >= 0");
}

const char* dataset_format_name(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::Icdar2015: return "icdar2015";
    case DatasetFormat::Icdar2013: return "icdar2013";
    case DatasetFormat::Synthetic: return "synthetic";
  }
  return "?";
}

DatasetFormat dataset_format_from_name(const std::string& s) {
  if (s == "icdar2015") return DatasetFormat::Icdar2015;
  if (s == "icdar2013") return DatasetFormat::Icdar2013;
  if (s == "synthetic") return DatasetFormat::Synthetic;
  throw ConfigError("unknown dataset format: " + s);
}

const char* background_name(Background b) {
  switch (b) {
    case Background::Noise: return "noise";
    case Background::Gradient: return "gradient";
    case Background::Texture: return "texture";
  }
  return "?";
}

Background background_from_name(const std::string& s) {
  if (s == "noise") return Background::Noise;
  if (s == "gradient") return Background::Gradient;
  if (s == "texture") return Background::Texture;
  throw ConfigError("unknown background kind: " + s);
}

// ---- parsing --------------------------------------------------------------

namespace {

bool parse_number(const std::string& tok, double& out) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end != begin && *end == '\0' && std::isfinite(out);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join_tail(const std::vector<std::string>& fields, size_t from) {
  std::string out;
  for (size_t i = from; i < fields.size(); ++i) {
    if (i > from) out += ",";
    out += fields[i];
  }
  return out;
}

// Repair a crossed vertex order by sorting around the centroid.
std::optional<QuadBox> quad_from_points(std::array<Vec2, 4> pts, bool& repaired) {
  repaired = false;
  try {
    return geometry::make_quad(pts);
  } catch (const std::invalid_argument&) {
  }
  Vec2 c{(pts[0].x + pts[1].x + pts[2].x + pts[3].x) / 4.0,
         (pts[0].y + pts[1].y + pts[2].y + pts[3].y) / 4.0};
  std::sort(pts.begin(), pts.end(), [&](Vec2 a, Vec2 b) {
    return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
  });
  try {
    QuadBox q = geometry::make_quad(pts);
    repaired = true;
    return q;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<Instance> parse_icdar_gt_text(const std::string& text, const std::string& name,
                                          const WarnFn& warn) {
  std::vector<Instance> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool first = true;
  auto emit_warning = [&](const std::string& msg) {
    if (warn) warn(name + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (first) {
      first = false;
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
          static_cast<unsigned char>(line[1]) == 0xBB &&
          static_cast<unsigned char>(line[2]) == 0xBF)
        line.erase(0, 3);
    }
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields = split_csv(line);
    std::array<double, 8> nums{};
    size_t numeric = 0;
    while (numeric < std::min<size_t>(8, fields.size()) &&
           parse_number(fields[numeric], nums[numeric]))
      ++numeric;

    std::array<Vec2, 4> pts;
    std::string transcription;
    if (numeric >= 8 && fields.size() >= 9) {
      for (int i = 0; i < 4; ++i) pts[i] = {nums[2 * i], nums[2 * i + 1]};
      transcription = join_tail(fields, 8);
    } else if (numeric >= 4 && fields.size() >= 5) {
      // ICDAR2013 horizontal rectangle: xmin, ymin, xmax, ymax.
      double x0 = nums[0], y0 = nums[1], x1 = nums[2], y1 = nums[3];
      pts = {Vec2{x0, y0}, Vec2{x1, y0}, Vec2{x1, y1}, Vec2{x0, y1}};
      transcription = join_tail(fields, 4);
    } else {
      throw DataError(name + ":" + std::to_string(lineno) + ": malformed annotation line");
    }

    bool repaired = false;
    std::optional<QuadBox> quad = quad_from_points(pts, repaired);
    if (!quad) {
      emit_warning("degenerate quad skipped");
      continue;
    }
    Instance inst;
    inst.quad = *quad;
    inst.transcription = transcription;
    inst.dont_care = (transcription == "###");
    if (repaired) {
      emit_warning("non-simple vertex order repaired; instance marked don't-care");
      inst.dont_care = true;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Instance> parse_icdar_gt(const std::string& path, const WarnFn& warn) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open gt file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_icdar_gt_text(ss.str(), path, warn);
}

std::string serialize_gt(const std::vector<Instance>& instances) {
  std::string out;
  char buf[256];
  for (const Instance& inst : instances) {
    const auto& v = inst.quad.vertices();
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,", v[0].x, v[0].y,
                  v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y);
    out += buf;
    out += inst.dont_care ? "###" : inst.transcription;
    out += "\n";
  }
  return out;
}

std::vector<geometry::Detection> parse_predictions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open prediction file: " + path);
  std::vector<geometry::Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() != 9)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 9 fields");
    std::array<double, 9> nums{};
    for (size_t i = 0; i < 9; ++i)
      if (!parse_number(fields[i], nums[i]))
        throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    std::array<Vec2, 4> pts;
    for (int i = 0; i < 4; ++i) pts[i] = {nums[2 * i], nums[2 * i + 1]};
    bool repaired = false;
    std::optional<QuadBox> quad = quad_from_points(pts, repaired);
    if (!quad) continue;  // unusable detection contributes nothing
    out.push_back({*quad, std::clamp(nums[8], 0.0, 1.0)});
  }
  return out;
}

std::string serialize_predictions(const std::vector<geometry::Detection>& dets) {
  std::string out;
  char buf[256];
  for (const auto& d : dets) {
    const auto& v = d.box.vertices();
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.4f\n", v[0].x,
                  v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y, d.score);
    out += buf;
  }
  return out;
}

// ---- augmentation ----------------------------------------------------------

AnnotatedImage augment(const AnnotatedImage& sample, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!cfg.enabled) return sample;

  double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  int new_h = std::max(1, static_cast<int>(std::lround(sample.img.h * s)));
  int new_w = std::max(1, static_cast<int>(std::lround(sample.img.w * s)));
  ImageU8 scaled = resize_bilinear(sample.img, new_h, new_w);
  double sy = static_cast<double>(new_h) / sample.img.h;
  double sx = static_cast<double>(new_w) / sample.img.w;

  int crop = cfg.crop_size;
  auto origin = [&](int extent) {
    int lo = std::min(0, extent - crop);
    int hi = std::max(0, extent - crop);
    return static_cast<int>(rng.uniform_int(lo, hi));
  };
  int ox = origin(new_w);
  int oy = origin(new_h);

  AnnotatedImage out;
  out.img = ImageU8(crop, crop, sample.img.c, 128);
  for (int y = std::max(0, oy); y < std::min(new_h, oy + crop); ++y)
    for (int x = std::max(0, ox); x < std::min(new_w, ox + crop); ++x)
      for (int ch = 0; ch < scaled.c; ++ch)
        out.img.at(y - oy, x - ox, ch) = scaled.at(y, x, ch);

  std::array<Vec2, 4> window{Vec2{0, 0}, Vec2{static_cast<double>(crop), 0},
                             Vec2{static_cast<double>(crop), static_cast<double>(crop)},
                             Vec2{0, static_cast<double>(crop)}};
  for (const Instance& inst : sample.instances) {
    QuadBox q = inst.quad.scaled(sx, sy).translated({-static_cast<double>(ox),
                                                     -static_cast<double>(oy)});
    double area = q.area();
    double inside = geometry::polygon_intersection_area(q.vertices(), window);
    if (inside <= 1e-9) continue;  // instance missed the crop entirely
    Instance kept = inst;
    kept.quad = q;
    if (inside / area < cfg.min_crop_overlap) kept.dont_care = true;
    out.instances.push_back(std::move(kept));
  }
  return out;
}

// ---- synthetic generation --------------------------------------------------

namespace {

constexpr int kGlyphRows = 7;
constexpr int kGlyphCols = 5;
constexpr int kAlphabetSize = 16;

// Fixed bank of blocky pseudo-glyph patterns, same for every dataset.
const std::vector<std::array<uint8_t, kGlyphRows>>& glyph_bank() {
  static const auto bank = [] {
    std::vector<std::array<uint8_t, kGlyphRows>> b(kAlphabetSize);
    Rng rng(0x67796c706873ULL);
    for (auto& glyph : b) {
      for (int r = 0; r < kGlyphRows; ++r) {
        uint8_t row = 0;
        for (int c = 0; c < kGlyphCols; ++c)
          if (rng.uniform() < 0.45) row |= static_cast<uint8_t>(1u << c);
        glyph[r] = row;
      }
      // Keep every glyph visibly inked: force a full middle row and corners.
      glyph[kGlyphRows / 2] = 0x1F;
      glyph[0] |= 0x11;
      glyph[kGlyphRows - 1] |= 0x11;
    }
    return b;
  }();
  return bank;
}

void fill_background(ImageU8& img, const SynthConfig& cfg, Rng& rng) {
  double base = rng.uniform(150.0, 215.0);
  switch (cfg.background) {
    case Background::Noise: {
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
          double v = base + rng.uniform(-18.0, 18.0);
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = static_cast<uint8_t>(std::clamp(v + rng.uniform(-4.0, 4.0), 0.0, 255.0));
        }
      break;
    }
    case Background::Gradient: {
      double other = rng.uniform(150.0, 215.0);
      double angle = rng.uniform(0.0, 2.0 * M_PI);
      double cx = std::cos(angle), cyv = std::sin(angle);
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
          double t = 0.5 + 0.5 * ((x * cx + y * cyv) / std::max(img.h, img.w));
          double v = base + (other - base) * std::clamp(t, 0.0, 1.0) + rng.uniform(-3.0, 3.0);
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      break;
    }
    case Background::Texture: {
      double fx = rng.uniform(0.05, 0.25), fy = rng.uniform(0.05, 0.25);
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
          double v = base + 14.0 * std::sin(fx * x) * std::sin(fy * y) + rng.uniform(-3.0, 3.0);
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      break;
    }
  }
}

struct WordLayout {
  Vec2 center;
  double width = 0, height = 0, theta = 0;
  std::vector<int> glyphs;
  std::array<Vec2, 4> corners() const {
    Vec2 ux{std::cos(theta), std::sin(theta)};
    Vec2 uy{-std::sin(theta), std::cos(theta)};
    Vec2 hw = ux * (0.5 * width), hh = uy * (0.5 * height);
    return {center - hw - hh, center + hw - hh, center + hw + hh, center - hw + hh};
  }
};

bool boxes_too_close(const std::array<Vec2, 4>& a, const std::vector<QuadBox>& placed,
                     double gap) {
  double ax0 = 1e300, ax1 = -1e300, ay0 = 1e300, ay1 = -1e300;
  for (const Vec2& p : a) {
    ax0 = std::min(ax0, p.x);
    ax1 = std::max(ax1, p.x);
    ay0 = std::min(ay0, p.y);
    ay1 = std::max(ay1, p.y);
  }
  for (const QuadBox& q : placed) {
    double bx0 = 1e300, bx1 = -1e300, by0 = 1e300, by1 = -1e300;
    for (const Vec2& p : q.vertices()) {
      bx0 = std::min(bx0, p.x);
      bx1 = std::max(bx1, p.x);
      by0 = std::min(by0, p.y);
      by1 = std::max(by1, p.y);
    }
    if (ax0 - gap < bx1 && bx0 - gap < ax1 && ay0 - gap < by1 && by0 - gap < ay1) return true;
  }
  return false;
}

void render_word(ImageU8& img, const WordLayout& w, image::Rgb ink) {
  auto corners = w.corners();
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const Vec2& p : corners) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  Vec2 ux{std::cos(w.theta), std::sin(w.theta)};
  Vec2 uy{-std::sin(w.theta), std::cos(w.theta)};
  double pad = 0.12 * w.height;
  double cell_w = (w.width - 2 * pad) / static_cast<double>(w.glyphs.size());
  double cell_h = w.height - 2 * pad;
  const auto& bank = glyph_bank();

  for (int py = std::max(0, static_cast<int>(std::floor(y0)));
       py <= std::min(img.h - 1, static_cast<int>(std::ceil(y1))); ++py) {
    for (int px = std::max(0, static_cast<int>(std::floor(x0)));
         px <= std::min(img.w - 1, static_cast<int>(std::ceil(x1))); ++px) {
      Vec2 p{px + 0.5, py + 0.5};
      Vec2 d = p - w.center;
      double u = d.dot(ux) + 0.5 * w.width;
      double v = d.dot(uy) + 0.5 * w.height;
      if (u < pad || u >= w.width - pad || v < pad || v >= w.height - pad) continue;
      double gu = (u - pad) / cell_w;
      int gi = std::min(static_cast<int>(gu), static_cast<int>(w.glyphs.size()) - 1);
      double fu = gu - gi;
      double fv = (v - pad) / cell_h;
      int col = std::min(static_cast<int>(fu * kGlyphCols), kGlyphCols - 1);
      int row = std::min(static_cast<int>(fv * kGlyphRows), kGlyphRows - 1);
      if (bank[w.glyphs[gi]][row] & (1u << col)) {
        img.at(py, px, 0) = ink.r;
        img.at(py, px, 1) = ink.g;
        img.at(py, px, 2) = ink.b;
      }
    }
  }
}

}  // namespace

AnnotatedImage generate_synthetic_image(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(index)));
  AnnotatedImage out;
  out.img = ImageU8(cfg.canvas, cfg.canvas, 3);
  fill_background(out.img, cfg, rng);

  int target_words = static_cast<int>(rng.uniform_int(cfg.words_min, cfg.words_max));
  std::vector<QuadBox> placed;
  for (int wi = 0; wi < target_words; ++wi) {
    bool ok = false;
    for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
      WordLayout w;
      int n_glyphs = static_cast<int>(rng.uniform_int(2, 6));
      double h = rng.uniform(cfg.font_height_min, cfg.font_height_max);
      w.height = h;
      w.width = n_glyphs * h * 0.62 + 0.24 * h;
      w.theta = cfg.rotation_range > 0 ? rng.uniform(-cfg.rotation_range, cfg.rotation_range)
                                       : 0.0;
      double margin = 0.5 * std::hypot(w.width, w.height) + 3.0;
      if (2 * margin >= cfg.canvas) continue;
      w.center = {rng.uniform(margin, cfg.canvas - margin),
                  rng.uniform(margin, cfg.canvas - margin)};
      for (int g = 0; g < n_glyphs; ++g)
        w.glyphs.push_back(static_cast<int>(rng.uniform_int(0, kAlphabetSize - 1)));

      auto corners = w.corners();
      bool inside = true;
      for (const Vec2& p : corners)
        inside = inside && p.x >= 2.0 && p.y >= 2.0 && p.x <= cfg.canvas - 2.0 &&
                 p.y <= cfg.canvas - 2.0;
      if (!inside) continue;
      if (!cfg.allow_overlap && boxes_too_close(corners, placed, 10.0)) continue;

      image::Rgb ink{static_cast<uint8_t>(rng.uniform_int(10, 70)),
                     static_cast<uint8_t>(rng.uniform_int(10, 70)),
                     static_cast<uint8_t>(rng.uniform_int(10, 70))};
      render_word(out.img, w, ink);

      Instance inst;
      inst.quad = geometry::make_quad(corners);
      std::string text;
      for (size_t g = 0; g < w.glyphs.size(); ++g)
        text += static_cast<char>('A' + (w.glyphs[g] % 26));
      inst.transcription = text;
      placed.push_back(inst.quad);
      out.instances.push_back(std::move(inst));
      ok = true;
    }
  }
  return out;
}

std::vector<AnnotatedImage> generate_synthetic(const SynthConfig& cfg, int n) {
  std::vector<AnnotatedImage> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_synthetic_image(cfg, i));
  return out;
}

// ---- dataset IO -------------------------------------------------------------

void write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& samples) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "gt");
  std::string manifest;
  char name[64];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06zu", i);
    std::string img_rel = std::string("images/") + name + ".ppm";
    std::string gt_rel = std::string("gt/") + name + ".txt";
    image::write_pnm((fs::path(dir) / img_rel).string(), samples[i].img);
    std::ofstream gt((fs::path(dir) / gt_rel).string(), std::ios::binary);
    gt << serialize_gt(samples[i].instances);
    manifest += img_rel + "\t" + gt_rel + "\n";
  }
  std::ofstream mf((fs::path(dir) / "manifest.txt").string(), std::ios::binary);
  mf << manifest;
  if (!mf) throw DataError("write_dataset: cannot write manifest in " + dir);
}

std::vector<AnnotatedImage> load_dataset_dir(const std::string& dir, const WarnFn& warn) {
  fs::path manifest = fs::path(dir) / "manifest.txt";
  if (!fs::exists(manifest)) throw DataError("dataset manifest not found: " + manifest.string());
  std::ifstream mf(manifest);
  std::vector<AnnotatedImage> out;
  std::string line;
  while (std::getline(mf, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("manifest line missing tab separator: " + line);
    AnnotatedImage sample;
    sample.img = image::read_pnm((fs::path(dir) / line.substr(0, tab)).string());
    sample.instances = parse_icdar_gt((fs::path(dir) / line.substr(tab + 1)).string(), warn);
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<AnnotatedImage> load_dataset(const DatasetSpec& spec, const WarnFn& warn) {
  if (spec.format == DatasetFormat::Synthetic) {
    if (!spec.root.empty()) return load_dataset_dir(spec.root, warn);
    return generate_synthetic(spec.synth, spec.synth_count);
  }
  // ICDAR formats share the directory layout; the 4-value rectangle variant
  // is recognized per line by the parser.
  std::string root = spec.root;
  if (root.empty()) throw ConfigError("dataset: root required for ICDAR formats");
  fs::path base = fs::path(root) / spec.split;
  if (!fs::exists(base / "manifest.txt")) base = root;
  return load_dataset_dir(base.string(), warn);
}

}  // namespace ctdet::datasets
