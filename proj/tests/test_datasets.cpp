// SPDX-License-Identifier: Apache-2.0
#include "ctdet/datasets.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"

using namespace ctdet;
using namespace ctdet::datasets;
using geometry::Vec2;

TEST_CASE("parse icdar quad and don't-care lines") {
  auto insts = parse_icdar_gt_text("10,10,50,10,50,30,10,30,HELLO\n"
                                   "60,60,90,60,90,80,60,80,###\n",
                                   "mem");
  REQUIRE(insts.size() == 2);
  CHECK(insts[0].transcription == "HELLO");
  CHECK(!insts[0].dont_care);
  CHECK(insts[0].quad.area() == doctest::Approx(800));
  CHECK(insts[1].dont_care);
}

TEST_CASE("parse icdar 2013 rectangle variant") {
  auto insts = parse_icdar_gt_text("10,10,50,30,word\n", "mem");
  REQUIRE(insts.size() == 1);
  const auto& v = insts[0].quad.vertices();
  CHECK(v[0].x == 10);
  CHECK(v[0].y == 10);
  CHECK(v[1].x == 50);
  CHECK(v[1].y == 10);
  CHECK(v[2].x == 50);
  CHECK(v[2].y == 30);
  CHECK(insts[0].transcription == "word");
}

TEST_CASE("parse tolerates BOM and CR, keeps commas in transcription") {
  std::string text = "\xEF\xBB\xBF" "10,10,50,10,50,30,10,30,A,B\r\n";
  auto insts = parse_icdar_gt_text(text, "mem");
  REQUIRE(insts.size() == 1);
  CHECK(insts[0].transcription == "A,B");
}

TEST_CASE("parse errors carry file and line") {
  CHECK_THROWS_WITH_AS(parse_icdar_gt_text("10,10\n", "gt.txt"),
                       doctest::Contains("gt.txt:1"), DataError);
  CHECK_THROWS_AS(parse_icdar_gt_text("10,10,50,10,50,30,10,30,OK\nbogus,line\n", "f"),
                  DataError);
}

TEST_CASE("non-simple vertex order is repaired and flagged don't-care") {
  // Bowtie order of a valid rectangle.
  std::vector<std::string> warnings;
  auto insts = parse_icdar_gt_text("0,0,10,0,0,10,10,10,X\n", "mem",
                                   [&](const std::string& w) { warnings.push_back(w); });
  REQUIRE(insts.size() == 1);
  CHECK(insts[0].dont_care);
  CHECK(insts[0].quad.area() == doctest::Approx(100));
  CHECK(!warnings.empty());
}

TEST_CASE("gt serialize/parse roundtrip is stable") {
  Rng rng(3030);
  std::vector<targets::Instance> insts;
  for (int i = 0; i < 6; ++i)
    insts.push_back({oracles::random_quad(rng, 200), "W" + std::to_string(i), i % 3 == 0});
  std::string text = serialize_gt(insts);
  auto parsed = parse_icdar_gt_text(text, "mem");
  REQUIRE(parsed.size() == insts.size());
  std::string again = serialize_gt(parsed);
  CHECK(text == again);
  for (size_t i = 0; i < insts.size(); ++i)
    CHECK(parsed[i].dont_care == insts[i].dont_care);
}

TEST_CASE("prediction serialize/parse roundtrip") {
  Rng rng(3131);
  std::vector<geometry::Detection> dets;
  for (int i = 0; i < 5; ++i) dets.push_back({oracles::random_quad(rng, 100), rng.uniform()});
  std::string text = serialize_predictions(dets);
  std::filesystem::create_directories("tmp_test");
  {
    std::ofstream f("tmp_test/pred.txt", std::ios::binary);
    f << text;
  }
  auto parsed = parse_predictions("tmp_test/pred.txt");
  REQUIRE(parsed.size() == dets.size());
  for (size_t i = 0; i < dets.size(); ++i)
    CHECK(geometry::quad_iou(parsed[i].box, dets[i].box) > 0.99);
}

TEST_CASE("augment identity config") {
  SynthConfig scfg;
  scfg.canvas = 96;
  scfg.seed = 5;
  AnnotatedImage sample = generate_synthetic_image(scfg, 0);
  AugmentConfig cfg;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.crop_size = 96;
  Rng rng(1);
  AnnotatedImage out = augment(sample, cfg, rng);
  CHECK(out.img.data == sample.img.data);
  REQUIRE(out.instances.size() == sample.instances.size());
  for (size_t i = 0; i < out.instances.size(); ++i)
    CHECK(geometry::quad_iou(out.instances[i].quad, sample.instances[i].quad) >
          doctest::Approx(0.999));
}

TEST_CASE("augment scales quads linearly") {
  AnnotatedImage sample;
  sample.img = image::ImageU8(64, 64, 3, 100);
  sample.instances.push_back({geometry::make_quad({Vec2{8, 8}, Vec2{24, 8}, Vec2{24, 16},
                                                   Vec2{8, 16}}),
                              "X", false});
  AugmentConfig cfg;
  cfg.scale_min = cfg.scale_max = 2.0;
  cfg.crop_size = 128;
  Rng rng(2);
  AnnotatedImage out = augment(sample, cfg, rng);
  REQUIRE(out.instances.size() == 1);
  // Scaled image is 128x128, crop of 128 starts at origin 0.
  const auto& v = out.instances[0].quad.vertices();
  CHECK(v[0].x == doctest::Approx(16));
  CHECK(v[0].y == doctest::Approx(16));
  CHECK(v[2].x == doctest::Approx(48));
  CHECK(v[2].y == doctest::Approx(32));
}

TEST_CASE("augment fuzz: surviving quads intersect the crop window") {
  Rng data_rng(3232);
  for (int iter = 0; iter < 25; ++iter) {
    AnnotatedImage sample;
    sample.img = image::ImageU8(128, 160, 3, 90);
    int n = static_cast<int>(data_rng.uniform_int(1, 6));
    for (int i = 0; i < n; ++i)
      sample.instances.push_back({oracles::random_quad(data_rng, 120, 6.0), "Q", false});
    AugmentConfig cfg;
    cfg.crop_size = 64;
    cfg.scale_min = 0.5;
    cfg.scale_max = 2.0;
    Rng rng(4000 + iter);
    AnnotatedImage out = augment(sample, cfg, rng);
    CHECK(out.img.h == 64);
    CHECK(out.img.w == 64);
    std::array<Vec2, 4> window{Vec2{0, 0}, Vec2{64, 0}, Vec2{64, 64}, Vec2{0, 64}};
    for (const auto& inst : out.instances) {
      double inside =
          geometry::polygon_intersection_area(inst.quad.vertices(), window);
      CHECK(inside > 0.0);
      if (inside / inst.quad.area() < cfg.min_crop_overlap) CHECK(inst.dont_care);
    }
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SynthConfig cfg;
  cfg.canvas = 128;
  cfg.seed = 77;
  auto a = generate_synthetic(cfg, 2);
  auto b = generate_synthetic(cfg, 2);
  REQUIRE(a.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(a[i].img.data == b[i].img.data);
    REQUIRE(a[i].instances.size() == b[i].instances.size());
  }
  // Different seeds give different images.
  cfg.seed = 78;
  auto c = generate_synthetic(cfg, 1);
  CHECK(c[0].img.data != a[0].img.data);
}

TEST_CASE("synthetic rotation_range 0 yields axis-aligned ground truth") {
  SynthConfig cfg;
  cfg.canvas = 128;
  cfg.rotation_range = 0.0;
  cfg.seed = 9;
  for (const auto& sample : generate_synthetic(cfg, 3))
    for (const auto& inst : sample.instances) {
      auto rect = geometry::min_area_rect(inst.quad);
      CHECK(std::abs(rect.theta) < 1e-9);
    }
}

TEST_CASE("synthetic quads are valid, on-canvas, non-overlapping; ink stays inside") {
  SynthConfig cfg;
  cfg.canvas = 160;
  cfg.seed = 31;
  cfg.words_min = 2;
  cfg.words_max = 5;
  for (const auto& sample : generate_synthetic(cfg, 4)) {
    CHECK(!sample.instances.empty());
    for (size_t i = 0; i < sample.instances.size(); ++i) {
      const auto& q = sample.instances[i].quad;
      CHECK(q.area() > 0);
      for (const Vec2& v : q.vertices()) {
        CHECK(v.x >= 0);
        CHECK(v.y >= 0);
        CHECK(v.x <= cfg.canvas);
        CHECK(v.y <= cfg.canvas);
      }
      for (size_t j = i + 1; j < sample.instances.size(); ++j)
        CHECK(geometry::quad_iou(q, sample.instances[j].quad) < 1e-9);
    }
    // Ink (dark pixels) only inside some instance quad, 1 px tolerance.
    for (int y = 0; y < sample.img.h; ++y)
      for (int x = 0; x < sample.img.w; ++x) {
        int lum = (sample.img.at(y, x, 0) + sample.img.at(y, x, 1) + sample.img.at(y, x, 2)) / 3;
        if (lum >= 90) continue;
        bool inside_any = false;
        for (const auto& inst : sample.instances) {
          // expand by 1 px: test the pixel center against each quad directly
          auto v = inst.quad.vertices();
          Vec2 c{(v[0].x + v[2].x) / 2, (v[0].y + v[2].y) / 2};
          std::array<Vec2, 4> grown;
          for (int k = 0; k < 4; ++k) {
            Vec2 d = v[k] - c;
            double len = d.norm();
            grown[k] = len > 0 ? c + d * ((len + 1.5) / len) : v[k];
          }
          if (oracles::winding_inside({x + 0.5, y + 0.5}, grown)) inside_any = true;
        }
        CHECK(inside_any);
      }
  }
}

TEST_CASE("dataset write/load roundtrip") {
  SynthConfig cfg;
  cfg.canvas = 96;
  cfg.seed = 55;
  auto samples = generate_synthetic(cfg, 3);
  std::string dir = "tmp_test/ds";
  write_dataset(dir, samples);
  auto loaded = load_dataset_dir(dir);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].img.data == samples[i].img.data);
    REQUIRE(loaded[i].instances.size() == samples[i].instances.size());
    for (size_t k = 0; k < samples[i].instances.size(); ++k)
      CHECK(geometry::quad_iou(loaded[i].instances[k].quad, samples[i].instances[k].quad) >
            0.99);
  }
}

TEST_CASE("load_dataset dispatches on format") {
  DatasetSpec spec;
  spec.format = DatasetFormat::Synthetic;
  spec.synth.canvas = 96;
  spec.synth.seed = 3;
  spec.synth_count = 2;
  CHECK(load_dataset(spec).size() == 2);

  DatasetSpec icdar;
  icdar.format = DatasetFormat::Icdar2015;
  CHECK_THROWS_AS(load_dataset(icdar), ConfigError);
}
