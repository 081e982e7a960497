// SPDX-License-Identifier: Apache-2.0
#include "ctdet/model.hpp"

#include <cmath>

#include "ctdet/datasets.hpp"
#include "ctdet/losses.hpp"
#include "ctdet/targets.hpp"
#include "doctest.h"

using namespace ctdet;
using namespace ctdet::model;

namespace {

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.stage_channels = {8, 8, 16, 16, 16};
  cfg.decoder_channels = {16, 8, 8};
  cfg.input_size = 64;
  cfg.gn_groups = 8;
  return cfg;
}

nn::Tensor random_images(int n, int size, uint64_t seed) {
  Rng rng(seed);
  nn::Tensor t({n, 3, size, size});
  for (float& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

const std::vector<VariantKind> kAllVariants{VariantKind::Baseline, VariantKind::Aux1,
                                            VariantKind::Aux2, VariantKind::Cascade1,
                                            VariantKind::Cascade2};

int64_t conv_params(int ci, int co, int k) { return static_cast<int64_t>(co) * ci * k * k + co; }

}  // namespace

TEST_CASE("output shape contract for all variants") {
  for (VariantKind kind : kAllVariants) {
    for (int size : {64, 96}) {
      BackboneConfig cfg = tiny_backbone();
      cfg.input_size = size;
      Model m(kind, cfg, 7);
      NetworkOutputs out = m.infer(random_images(2, size, 11));
      CHECK(out.score.shape == std::vector<int>{2, 1, size / 4, size / 4});
      CHECK(out.distances.shape == std::vector<int>{2, 4, size / 4, size / 4});
      CHECK(out.angle.shape == std::vector<int>{2, 1, size / 4, size / 4});
      CHECK(out.has_contour == (kind != VariantKind::Baseline));
      if (out.has_contour)
        CHECK(out.contour.shape == std::vector<int>{2, 1, size / 4, size / 4});

      // Activation ranges.
      for (float v : out.score.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
      }
      for (float v : out.distances.data) CHECK(v >= 0.0f);
      for (float v : out.angle.data) {
        CHECK(v > -M_PI / 4);
        CHECK(v < M_PI / 4);
      }
    }
  }
}

TEST_CASE("input size must be a multiple of 32") {
  Model m(VariantKind::Baseline, tiny_backbone(), 7);
  CHECK_THROWS_AS(m.infer(nn::Tensor({1, 3, 40, 40})), ConfigError);
  BackboneConfig bad = tiny_backbone();
  bad.input_size = 100;
  CHECK_THROWS_AS(Model(VariantKind::Baseline, bad, 0), ConfigError);
}

TEST_CASE("shared parameter report per variant") {
  BackboneConfig cfg = tiny_backbone();

  Model baseline(VariantKind::Baseline, cfg, 1);
  SharedParameterReport rb = baseline.shared_parameter_report();
  CHECK(!rb.has_contour_branch);
  CHECK(rb.shared == 0);
  for (const auto& s : rb.subsystems) CHECK(!s.used_by_contour);

  Model aux1(VariantKind::Aux1, cfg, 1);
  SharedParameterReport r1 = aux1.shared_parameter_report();
  int64_t encoder_params = 0;
  for (const auto& s : r1.subsystems)
    if (s.name == "encoder") encoder_params = s.params;
  CHECK(r1.shared == encoder_params);
  CHECK(r1.shared > 0);

  Model aux2(VariantKind::Aux2, cfg, 1);
  SharedParameterReport r2 = aux2.shared_parameter_report();
  int64_t enc_dec = 0;
  for (const auto& s : r2.subsystems)
    if (s.name == "encoder" || s.name == "decoder") enc_dec += s.params;
  CHECK(r2.shared == enc_dec);

  Model cas1(VariantKind::Cascade1, cfg, 1);
  CHECK(cas1.shared_parameter_report().shared == 0);

  Model cas2(VariantKind::Cascade2, cfg, 1);
  SharedParameterReport r4 = cas2.shared_parameter_report();
  int64_t enc_dec2 = 0;
  for (const auto& s : r4.subsystems)
    if (s.name == "encoder" || s.name == "decoder") enc_dec2 += s.params;
  CHECK(r4.shared == enc_dec2);
}

TEST_CASE("cascade2 parameter count equals aux2 plus merge tower and head delta") {
  BackboneConfig cfg = tiny_backbone();
  Model aux2(VariantKind::Aux2, cfg, 1);
  Model cas2(VariantKind::Cascade2, cfg, 1);
  int dec_out = cfg.decoder_channels.back();
  int64_t tower = conv_params(dec_out + 1, 32, 3) + conv_params(32, 32, 3) +
                  conv_params(32, 32, 3);
  int64_t head_on = conv_params(32, 1, 1) + conv_params(32, 4, 1) + conv_params(32, 1, 1);
  int64_t head_off =
      conv_params(dec_out, 1, 1) + conv_params(dec_out, 4, 1) + conv_params(dec_out, 1, 1);
  CHECK(cas2.parameter_count() == aux2.parameter_count() + tower + head_on - head_off);
}

TEST_CASE("cascade variants depend on contour weights; baseline cannot") {
  BackboneConfig cfg = tiny_backbone();
  nn::Tensor imgs = random_images(1, 64, 23);

  for (VariantKind kind : {VariantKind::Cascade1, VariantKind::Cascade2}) {
    Model m(kind, cfg, 5);
    NetworkOutputs before = m.infer(imgs);
    nn::Parameter* p = m.find_parameter("ct_head.w");
    REQUIRE(p != nullptr);
    for (float& v : p->value.data) v += 0.5f;
    NetworkOutputs after = m.infer(imgs);
    double diff = 0.0;
    for (size_t i = 0; i < before.score.data.size(); ++i)
      diff = std::max(diff, std::abs(static_cast<double>(before.score.data[i]) -
                                     after.score.data[i]));
    CHECK(diff > 1e-7);
  }

  // Aux1: the contour head touches only the contour output.
  Model aux1(VariantKind::Aux1, cfg, 5);
  NetworkOutputs before = aux1.infer(imgs);
  nn::Parameter* p = aux1.find_parameter("ct_head.w");
  REQUIRE(p != nullptr);
  for (float& v : p->value.data) v += 0.5f;
  NetworkOutputs after = aux1.infer(imgs);
  for (size_t i = 0; i < before.score.data.size(); ++i)
    CHECK(before.score.data[i] == after.score.data[i]);

  Model baseline(VariantKind::Baseline, cfg, 5);
  CHECK(baseline.find_parameter("ct_head.w") == nullptr);
}

TEST_CASE("batch duplication gives identical per-image outputs") {
  BackboneConfig cfg = tiny_backbone();
  for (VariantKind kind : kAllVariants) {
    Model m(kind, cfg, 9);
    nn::Tensor one = random_images(1, 64, 31);
    nn::Tensor two({2, 3, 64, 64});
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.data.size());
    NetworkOutputs o1 = m.infer(one);
    NetworkOutputs o2 = m.infer(two);
    size_t n = o1.score.data.size();
    for (size_t i = 0; i < n; ++i) {
      CHECK(std::abs(o2.score.data[i] - o1.score.data[i]) < 1e-5);
      CHECK(std::abs(o2.score.data[n + i] - o1.score.data[i]) < 1e-5);
    }
  }
}

TEST_CASE("determinism under fixed seed") {
  BackboneConfig cfg = tiny_backbone();
  Model a(VariantKind::Cascade2, cfg, 1234);
  Model b(VariantKind::Cascade2, cfg, 1234);
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i]->value.data == b.parameters()[i]->value.data);
  nn::Tensor imgs = random_images(1, 64, 77);
  NetworkOutputs oa = a.infer(imgs);
  NetworkOutputs ob = b.infer(imgs);
  for (size_t i = 0; i < oa.score.data.size(); ++i)
    CHECK(std::abs(oa.score.data[i] - ob.score.data[i]) <= 1e-6f);
}

TEST_CASE("every parameter receives gradient from the joint loss") {
  // Synthetic batch with real targets; loss gradients seeded exactly as the
  // trainer does.
  datasets::SynthConfig scfg;
  scfg.canvas = 64;
  scfg.words_min = 1;
  scfg.words_max = 2;
  scfg.font_height_min = 10;
  scfg.font_height_max = 16;
  scfg.seed = 99;
  auto sample = datasets::generate_synthetic_image(scfg, 0);
  REQUIRE(!sample.instances.empty());
  targets::TargetMaps maps = targets::build_targets(sample, {});

  nn::Tensor imgs({1, 3, 64, 64});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        imgs.data[(c * 64 + y) * 64 + x] = sample.img.at(y, x, c) / 255.0f;

  size_t hw = maps.score.size();
  std::vector<double> gt_score(maps.score.begin(), maps.score.end());
  std::vector<double> gt_contour(maps.contour.begin(), maps.contour.end());
  std::vector<double> gt_angle(maps.angle.begin(), maps.angle.end());
  std::vector<double> mask(hw), pos(hw);
  for (size_t i = 0; i < hw; ++i) {
    mask[i] = maps.ignore[i] > 0 ? 0.0 : 1.0;
    pos[i] = maps.score[i] == 1.0f ? 1.0 : 0.0;
  }
  std::array<std::vector<double>, 4> gt_dist;
  for (int k = 0; k < 4; ++k) gt_dist[k].assign(maps.dist[k].begin(), maps.dist[k].end());

  losses::LossWeights lw;
  for (VariantKind kind : kAllVariants) {
    Model m(kind, tiny_backbone(), 3);
    nn::Tape tape;
    ForwardMaps fm = m.forward(tape, imgs);

    std::vector<double> pred_score(fm.score->value.data.begin(), fm.score->value.data.end());
    std::vector<double> pred_angle(fm.angle->value.data.begin(), fm.angle->value.data.end());
    std::array<std::vector<double>, 4> pred_dist;
    for (int k = 0; k < 4; ++k) {
      pred_dist[k].resize(hw);
      for (size_t i = 0; i < hw; ++i) pred_dist[k][i] = fm.distances->value.data[k * hw + i];
    }

    std::vector<double> g_score, g_angle, g_contour;
    std::array<std::vector<double>, 4> g_dist;
    losses::dice_loss(pred_score, gt_score, mask, lw.epsilon, &g_score);
    std::array<losses::Span, 4> ps{pred_dist[0], pred_dist[1], pred_dist[2], pred_dist[3]};
    std::array<losses::Span, 4> gs{gt_dist[0], gt_dist[1], gt_dist[2], gt_dist[3]};
    losses::iou_box_loss(ps, gs, pos, lw.epsilon, &g_dist);
    losses::angle_loss(pred_angle, gt_angle, pos, &g_angle);

    auto seed = [](nn::Var v, const std::vector<double>& g, double s) {
      float* dst = v->ensure_grad().data.data();
      for (size_t i = 0; i < g.size(); ++i) dst[i] += static_cast<float>(g[i] * s);
    };
    seed(fm.score, g_score, lw.lambda_cls);
    seed(fm.angle, g_angle, 1.0);
    {
      float* dd = fm.distances->ensure_grad().data.data();
      for (int k = 0; k < 4; ++k)
        for (size_t i = 0; i < hw; ++i)
          dd[k * hw + i] += static_cast<float>(g_dist[k][i] * lw.lambda_iou);
    }
    if (fm.contour) {
      std::vector<double> pred_contour(fm.contour->value.data.begin(),
                                       fm.contour->value.data.end());
      losses::contour_loss(pred_contour, gt_contour, mask, &g_contour);
      seed(fm.contour, g_contour, lw.beta_contour);
    }

    m.zero_grads();
    tape.backward();
    for (const nn::Parameter* p : m.parameters()) {
      bool any = false;
      for (float g : p->grad.data) any = any || g != 0.0f;
      INFO(variant_name(kind), " param ", p->name);
      CHECK(any);
    }
  }
}

TEST_CASE("cascade2 contour branch receives gradient through the merge alone") {
  // Zero the contour-loss seed; gradient must still reach the contour head
  // via the detection pathway concatenation.
  Model m(VariantKind::Cascade2, tiny_backbone(), 3);
  nn::Tape tape;
  ForwardMaps fm = m.forward(tape, random_images(1, 64, 13));
  fm.score->ensure_grad();
  for (float& g : fm.score->grad.data) g = 1.0f;
  m.zero_grads();
  tape.backward();
  nn::Parameter* p = m.find_parameter("ct_head.w");
  REQUIRE(p != nullptr);
  bool any = false;
  for (float g : p->grad.data) any = any || g != 0.0f;
  CHECK(any);

  // With the merge gradient stopped, the same seed reaches nothing.
  BackboneConfig stopped = tiny_backbone();
  stopped.stop_contour_gradient = true;
  Model ms(VariantKind::Cascade2, stopped, 3);
  nn::Tape tape2;
  ForwardMaps fm2 = ms.forward(tape2, random_images(1, 64, 13));
  fm2.score->ensure_grad();
  for (float& g : fm2.score->grad.data) g = 1.0f;
  ms.zero_grads();
  tape2.backward();
  nn::Parameter* p2 = ms.find_parameter("ct_head.w");
  for (float g : p2->grad.data) CHECK(g == 0.0f);
}

TEST_CASE("variant name round trip") {
  for (VariantKind kind : kAllVariants)
    CHECK(variant_from_name(variant_name(kind)) == kind);
  CHECK_THROWS_AS(variant_from_name("resnet"), ConfigError);
}
