// SPDX-License-Identifier: Apache-2.0
#include "ctdet/model.hpp"

#include <cmath>
#include <map>

#include "ctdet/common.hpp"

namespace ctdet::model {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

const char* variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::Baseline: return "baseline";
    case VariantKind::Aux1: return "aux1";
    case VariantKind::Aux2: return "aux2";
    case VariantKind::Cascade1: return "cascade1";
    case VariantKind::Cascade2: return "cascade2";
  }
  return "?";
}

VariantKind variant_from_name(const std::string& name) {
  for (VariantKind k : {VariantKind::Baseline, VariantKind::Aux1, VariantKind::Aux2,
                        VariantKind::Cascade1, VariantKind::Cascade2})
    if (name == variant_name(k)) return k;
  throw ConfigError("unknown variant: " + name);
}

bool variant_has_contour(VariantKind k) { return k != VariantKind::Baseline; }

void BackboneConfig::validate() const {
  if (stage_channels.size() != 5) throw ConfigError("backbone: need 5 stage channels");
  if (decoder_channels.size() != 3) throw ConfigError("backbone: need 3 decoder channels");
  if (input_size <= 0 || input_size % 32 != 0)
    throw ConfigError("backbone: input_size must be a positive multiple of 32");
  for (int c : stage_channels)
    if (c <= 0 || c % gn_groups != 0)
      throw ConfigError("backbone: stage channels must be positive multiples of gn_groups");
  for (int c : decoder_channels)
    if (c <= 0 || c % gn_groups != 0)
      throw ConfigError("backbone: decoder channels must be positive multiples of gn_groups");
}

namespace {

constexpr int kTowerWidth = 32;   // Cascade2 merge convs: depth 32, kernel 3x3
constexpr int kTowerDepth = 3;
constexpr float kScoreBiasInit = -2.0f;  // start with mostly-background scores

struct ConvSpec {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  int stride = 1;
  int pad = 1;
};

struct GnSpec {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  int groups = 8;
};

struct ConvBlock {
  ConvSpec conv;
  GnSpec gn;
};

struct EncoderDef {
  // 5 stages, each: stride-2 conv block then stride-1 conv block.
  std::vector<std::array<ConvBlock, 2>> stages;
};

struct DecoderDef {
  struct Merge {
    ConvBlock reduce;  // 1x1 after concat
    ConvBlock fuse;    // 3x3
  };
  std::vector<Merge> merges;
  ConvBlock final_fuse;
};

struct DetHeadDef {
  ConvSpec score, geo, angle;
};

}  // namespace

struct Model::Impl {
  BackboneConfig cfg;
  VariantKind kind;

  std::optional<EncoderDef> enc, ct_enc;
  std::optional<DecoderDef> dec, ct_dec;
  std::optional<DetHeadDef> det_head;
  std::optional<ConvSpec> contour_head;
  std::vector<ConvSpec> tower;

  std::vector<std::unique_ptr<Parameter>>* params = nullptr;

  Parameter* new_param(const std::string& name, const std::string& subsystem,
                       std::vector<int> shape, bool det, bool contour) {
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->subsystem = subsystem;
    p->used_by_detection = det;
    p->used_by_contour = contour;
    p->value = Tensor(shape);
    p->grad = Tensor(shape);
    p->adam_m = Tensor(shape);
    p->adam_v = Tensor(shape);
    Parameter* raw = p.get();
    params->push_back(std::move(p));
    return raw;
  }

  ConvSpec make_conv(const std::string& name, const std::string& sub, int ci, int co, int k,
                     int stride, bool det, bool contour, Rng& rng, float bias_init = 0.0f) {
    ConvSpec c;
    c.w = new_param(name + ".w", sub, {co, ci, k, k}, det, contour);
    c.b = new_param(name + ".b", sub, {co}, det, contour);
    c.stride = stride;
    c.pad = k / 2;
    nn::he_normal_init(c.w->value, ci * k * k, rng);
    std::fill(c.b->value.data.begin(), c.b->value.data.end(), bias_init);
    return c;
  }

  ConvBlock make_block(const std::string& name, const std::string& sub, int ci, int co, int k,
                       int stride, bool det, bool contour, Rng& rng) {
    ConvBlock b;
    b.conv = make_conv(name, sub, ci, co, k, stride, det, contour, rng);
    b.gn.gamma = new_param(name + ".gamma", sub, {co}, det, contour);
    b.gn.beta = new_param(name + ".beta", sub, {co}, det, contour);
    b.gn.groups = cfg.gn_groups;
    std::fill(b.gn.gamma->value.data.begin(), b.gn.gamma->value.data.end(), 1.0f);
    return b;
  }

  EncoderDef make_encoder(const std::string& prefix, const std::string& sub, int in_ch,
                          bool det, bool contour, Rng& rng) {
    EncoderDef e;
    int ci = in_ch;
    for (size_t i = 0; i < cfg.stage_channels.size(); ++i) {
      int co = cfg.stage_channels[i];
      std::string base = prefix + ".s" + std::to_string(i);
      e.stages.push_back({make_block(base + ".c0", sub, ci, co, 3, 2, det, contour, rng),
                          make_block(base + ".c1", sub, co, co, 3, 1, det, contour, rng)});
      ci = co;
    }
    return e;
  }

  DecoderDef make_decoder(const std::string& prefix, const std::string& sub, bool det,
                          bool contour, Rng& rng) {
    DecoderDef d;
    const auto& sc = cfg.stage_channels;
    int carried = sc[4];
    for (size_t j = 0; j < cfg.decoder_channels.size(); ++j) {
      int skip = sc[3 - j];
      int co = cfg.decoder_channels[j];
      std::string base = prefix + ".m" + std::to_string(j);
      DecoderDef::Merge m;
      m.reduce = make_block(base + ".c1x1", sub, carried + skip, co, 1, 1, det, contour, rng);
      m.fuse = make_block(base + ".c3x3", sub, co, co, 3, 1, det, contour, rng);
      d.merges.push_back(m);
      carried = co;
    }
    d.final_fuse = make_block(prefix + ".final", sub, carried, carried, 3, 1, det, contour, rng);
    return d;
  }

  DetHeadDef make_det_head(const std::string& prefix, int in_ch, Rng& rng) {
    DetHeadDef h;
    h.score = make_conv(prefix + ".score", "det_head", in_ch, 1, 1, 1, true, false, rng,
                        kScoreBiasInit);
    h.geo = make_conv(prefix + ".geo", "det_head", in_ch, 4, 1, 1, true, false, rng);
    h.angle = make_conv(prefix + ".angle", "det_head", in_ch, 1, 1, 1, true, false, rng);
    return h;
  }

  // ---- forward pieces ----

  static Var apply_conv(Tape& t, const ConvSpec& c, Var x) {
    return nn::conv2d(t, x, t.leaf_param(*c.w), t.leaf_param(*c.b), c.stride, c.pad);
  }

  static Var apply_block(Tape& t, const ConvBlock& b, Var x) {
    Var y = apply_conv(t, b.conv, x);
    y = nn::group_norm(t, y, t.leaf_param(*b.gn.gamma), t.leaf_param(*b.gn.beta), b.gn.groups);
    return nn::relu(t, y);
  }

  static std::vector<Var> run_encoder(Tape& t, const EncoderDef& e, Var x) {
    std::vector<Var> feats;
    Var h = x;
    for (const auto& stage : e.stages) {
      h = apply_block(t, stage[0], h);
      h = apply_block(t, stage[1], h);
      feats.push_back(h);
    }
    return feats;
  }

  static Var run_decoder(Tape& t, const DecoderDef& d, const std::vector<Var>& feats) {
    Var h = feats[4];
    for (size_t j = 0; j < d.merges.size(); ++j) {
      h = nn::upsample2x(t, h);
      h = nn::concat_channels(t, {h, feats[3 - j]});
      h = apply_block(t, d.merges[j].reduce, h);
      h = apply_block(t, d.merges[j].fuse, h);
    }
    return apply_block(t, d.final_fuse, h);
  }

  ForwardMaps run_det_head(Tape& t, Var feat) const {
    ForwardMaps out;
    out.score = nn::sigmoid(t, apply_conv(t, det_head->score, feat));
    double scale = cfg.effective_geo_scale() / 4.0;  // output-map pixel units
    out.distances =
        nn::affine(t, nn::sigmoid(t, apply_conv(t, det_head->geo, feat)),
                   static_cast<float>(scale), 0.0f);
    out.angle = nn::affine(t, nn::sigmoid(t, apply_conv(t, det_head->angle, feat)),
                           static_cast<float>(M_PI / 2.0), static_cast<float>(-M_PI / 4.0));
    return out;
  }
};

Model::Model(VariantKind kind, BackboneConfig cfg, uint64_t seed)
    : kind_(kind), cfg_(std::move(cfg)) {
  cfg_.validate();
  impl_ = std::make_shared<Impl>();
  impl_->cfg = cfg_;
  impl_->kind = kind;
  impl_->params = &params_;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  Impl& m = *impl_;
  int dec_out = cfg_.decoder_channels.back();

  switch (kind) {
    case VariantKind::Baseline:
      m.enc = m.make_encoder("enc", "encoder", 3, true, false, rng);
      m.dec = m.make_decoder("dec", "decoder", true, false, rng);
      m.det_head = m.make_det_head("head", dec_out, rng);
      break;
    case VariantKind::Aux1:
      m.enc = m.make_encoder("enc", "encoder", 3, true, true, rng);
      m.dec = m.make_decoder("dec_det", "decoder_det", true, false, rng);
      m.ct_dec = m.make_decoder("dec_ct", "decoder_contour", false, true, rng);
      m.det_head = m.make_det_head("head", dec_out, rng);
      m.contour_head = m.make_conv("ct_head", "contour_head", dec_out, 1, 1, 1, false, true, rng);
      break;
    case VariantKind::Aux2:
      m.enc = m.make_encoder("enc", "encoder", 3, true, true, rng);
      m.dec = m.make_decoder("dec", "decoder", true, true, rng);
      m.det_head = m.make_det_head("head", dec_out, rng);
      m.contour_head = m.make_conv("ct_head", "contour_head", dec_out, 1, 1, 1, false, true, rng);
      break;
    case VariantKind::Cascade1:
      m.ct_enc = m.make_encoder("ct_enc", "contour_encoder", 3, false, true, rng);
      m.ct_dec = m.make_decoder("ct_dec", "contour_decoder", false, true, rng);
      m.contour_head = m.make_conv("ct_head", "contour_head", dec_out, 1, 1, 1, false, true, rng);
      m.enc = m.make_encoder("enc", "encoder", 4, true, false, rng);
      m.dec = m.make_decoder("dec", "decoder", true, false, rng);
      m.det_head = m.make_det_head("head", dec_out, rng);
      break;
    case VariantKind::Cascade2:
      m.enc = m.make_encoder("enc", "encoder", 3, true, true, rng);
      m.dec = m.make_decoder("dec", "decoder", true, true, rng);
      m.contour_head = m.make_conv("ct_head", "contour_head", dec_out, 1, 1, 1, false, true, rng);
      {
        int ci = dec_out + 1;
        for (int i = 0; i < kTowerDepth; ++i) {
          m.tower.push_back(m.make_conv("tower.c" + std::to_string(i), "merge_tower", ci,
                                        kTowerWidth, 3, 1, true, false, rng));
          ci = kTowerWidth;
        }
      }
      m.det_head = m.make_det_head("head", kTowerWidth, rng);
      break;
  }
  param_ptrs_.reserve(params_.size());
  for (auto& p : params_) param_ptrs_.push_back(p.get());
}

ForwardMaps Model::forward(Tape& tape, const Tensor& images) const {
  if (images.shape.size() != 4 || images.dim(1) != 3)
    throw ConfigError("forward: expected N,3,H,W input");
  if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
    throw ConfigError("forward: input size must be a multiple of 32");

  Impl& m = *impl_;
  Var x = tape.leaf(images, "input");
  Var xn = nn::affine(tape, x, 1.0f, -0.5f);  // [0,1] -> zero-centered

  ForwardMaps out;
  switch (kind_) {
    case VariantKind::Baseline: {
      Var feat = Impl::run_decoder(tape, *m.dec, Impl::run_encoder(tape, *m.enc, xn));
      out = m.run_det_head(tape, feat);
      break;
    }
    case VariantKind::Aux1: {
      auto feats = Impl::run_encoder(tape, *m.enc, xn);
      Var fd = Impl::run_decoder(tape, *m.dec, feats);
      Var fc = Impl::run_decoder(tape, *m.ct_dec, feats);
      out = m.run_det_head(tape, fd);
      out.contour = nn::sigmoid(tape, Impl::apply_conv(tape, *m.contour_head, fc));
      break;
    }
    case VariantKind::Aux2: {
      Var feat = Impl::run_decoder(tape, *m.dec, Impl::run_encoder(tape, *m.enc, xn));
      out = m.run_det_head(tape, feat);
      out.contour = nn::sigmoid(tape, Impl::apply_conv(tape, *m.contour_head, feat));
      break;
    }
    case VariantKind::Cascade1: {
      Var fc = Impl::run_decoder(tape, *m.ct_dec, Impl::run_encoder(tape, *m.ct_enc, xn));
      Var contour = nn::sigmoid(tape, Impl::apply_conv(tape, *m.contour_head, fc));
      // Contour computed first, then resized to input resolution and joined
      // as a 4th image channel.
      Var c_full = nn::upsample2x(tape, nn::upsample2x(tape, contour));
      if (cfg_.stop_contour_gradient) c_full = nn::stop_gradient(tape, c_full);
      Var c_in = nn::affine(tape, c_full, 1.0f, -0.5f);
      Var x4 = nn::concat_channels(tape, {xn, c_in});
      Var feat = Impl::run_decoder(tape, *m.dec, Impl::run_encoder(tape, *m.enc, x4));
      out = m.run_det_head(tape, feat);
      out.contour = contour;
      break;
    }
    case VariantKind::Cascade2: {
      Var feat = Impl::run_decoder(tape, *m.dec, Impl::run_encoder(tape, *m.enc, xn));
      Var contour = nn::sigmoid(tape, Impl::apply_conv(tape, *m.contour_head, feat));
      Var merged = cfg_.stop_contour_gradient ? nn::stop_gradient(tape, contour) : contour;
      Var h = nn::concat_channels(tape, {feat, merged});
      for (const ConvSpec& c : m.tower) h = nn::relu(tape, Impl::apply_conv(tape, c, h));
      out = m.run_det_head(tape, h);
      out.contour = contour;
      break;
    }
  }
  return out;
}

NetworkOutputs Model::infer(const Tensor& images) const {
  Tape tape;
  ForwardMaps maps = forward(tape, images);
  auto finite = [](const Tensor& t) {
    for (float v : t.data)
      if (!std::isfinite(v)) return false;
    return true;
  };
  NetworkOutputs out;
  out.score = maps.score->value;
  out.distances = maps.distances->value;
  out.angle = maps.angle->value;
  if (maps.contour) {
    out.contour = maps.contour->value;
    out.has_contour = true;
  }
  if (!finite(out.score) || !finite(out.distances) || !finite(out.angle) ||
      (out.has_contour && !finite(out.contour))) {
    throw NumericError("non-finite network output; first bad layer: " +
                       tape.first_non_finite());
  }
  return out;
}

nn::Parameter* Model::find_parameter(const std::string& name) const {
  for (Parameter* p : param_ptrs_)
    if (p->name == name) return p;
  return nullptr;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const Parameter* p : param_ptrs_) n += p->value.numel();
  return n;
}

SharedParameterReport Model::shared_parameter_report() const {
  SharedParameterReport rep;
  rep.has_contour_branch = variant_has_contour(kind_);
  std::map<std::string, SubsystemCount> subs;
  for (const Parameter* p : param_ptrs_) {
    auto& s = subs[p->subsystem];
    s.name = p->subsystem;
    s.params += p->value.numel();
    s.used_by_detection = s.used_by_detection || p->used_by_detection;
    s.used_by_contour = s.used_by_contour || p->used_by_contour;
    rep.total += p->value.numel();
    if (p->used_by_detection && p->used_by_contour) rep.shared += p->value.numel();
  }
  for (auto& [_, s] : subs) rep.subsystems.push_back(s);
  return rep;
}

void Model::zero_grads() const {
  for (Parameter* p : param_ptrs_) p->zero_grad();
}

}  // namespace ctdet::model
