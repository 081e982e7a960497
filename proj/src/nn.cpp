// SPDX-License-Identifier: Apache-2.0
#include "ctdet/nn.hpp"

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ctdet::nn {

namespace {

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(std::string("nn: ") + msg);
}

}  // namespace

Var Tape::leaf(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->name = std::move(name);
  n->value = std::move(value);
  nodes_.push_back(n);
  return n;
}

Var Tape::leaf_param(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->name = p.name;
  n->value = p.value;
  n->needs_grad = true;
  n->param = &p;
  n->backward_fn = [](Node& node) {
    Parameter* prm = node.param;
    for (size_t i = 0; i < node.grad.data.size(); ++i) prm->grad.data[i] += node.grad.data[i];
  };
  nodes_.push_back(n);
  return n;
}

Var Tape::record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd,
                 std::string name) {
  auto n = std::make_shared<Node>();
  n->name = std::move(name);
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const Var& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  n->backward_fn = std::move(bwd);
  nodes_.push_back(n);
  return n;
}

void Tape::backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.needs_grad || !n.has_grad() || !n.backward_fn) continue;
    n.backward_fn(n);
  }
}

std::string Tape::first_non_finite() const {
  for (const Var& v : nodes_)
    for (float x : v->value.data)
      if (!std::isfinite(x)) return v->name;
  return {};
}

namespace {

// ---- conv2d -------------------------------------------------------------

struct ConvShape {
  int n, ci, h, w, co, kh, kw, stride, pad, ho, wo;
};

ConvShape conv_shape(const Tensor& x, const Tensor& wt, int stride, int pad) {
  check(x.shape.size() == 4 && wt.shape.size() == 4, "conv2d expects 4D tensors");
  ConvShape s{};
  s.n = x.dim(0);
  s.ci = x.dim(1);
  s.h = x.dim(2);
  s.w = x.dim(3);
  s.co = wt.dim(0);
  s.kh = wt.dim(2);
  s.kw = wt.dim(3);
  s.stride = stride;
  s.pad = pad;
  check(wt.dim(1) == s.ci, "conv2d channel mismatch");
  s.ho = (s.h + 2 * pad - s.kh) / stride + 1;
  s.wo = (s.w + 2 * pad - s.kw) / stride + 1;
  check(s.ho > 0 && s.wo > 0, "conv2d output collapsed");
  return s;
}

// Row k of the column matrix starts at col + k*ld; the caller positions the
// image's column block inside a batch-wide matrix.
void im2col(const float* x, const ConvShape& s, float* col, size_t ld) {
  for (int c = 0; c < s.ci; ++c) {
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx) {
        float* dst = col + (static_cast<size_t>(c) * s.kh * s.kw + ky * s.kw + kx) * ld;
        for (int oy = 0; oy < s.ho; ++oy) {
          int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) {
            std::memset(dst + static_cast<size_t>(oy) * s.wo, 0, sizeof(float) * s.wo);
            continue;
          }
          const float* src_row = x + (static_cast<size_t>(c) * s.h + iy) * s.w;
          float* dst_row = dst + static_cast<size_t>(oy) * s.wo;
          for (int ox = 0; ox < s.wo; ++ox) {
            int ix = ox * s.stride - s.pad + kx;
            dst_row[ox] = (ix >= 0 && ix < s.w) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvShape& s, size_t ld, float* dx) {
  for (int c = 0; c < s.ci; ++c) {
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx) {
        const float* src = col + (static_cast<size_t>(c) * s.kh * s.kw + ky * s.kw + kx) * ld;
        for (int oy = 0; oy < s.ho; ++oy) {
          int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          float* dst_row = dx + (static_cast<size_t>(c) * s.h + iy) * s.w;
          const float* src_row = src + static_cast<size_t>(oy) * s.wo;
          for (int ox = 0; ox < s.wo; ++ox) {
            int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < s.w) dst_row[ix] += src_row[ox];
          }
        }
      }
    }
  }
}

void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace

// One GEMM per call over the whole batch: the column matrix is K x (N*L)
// with one column block per image. BLAS keeps its own threading; the copy
// passes parallelize over images with disjoint writes, so results are
// independent of thread count.
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  ConvShape s = conv_shape(x->value, w->value, stride, pad);
  check(b->value.numel() == s.co, "conv2d bias size");
  const int K = s.ci * s.kh * s.kw;
  const size_t L = static_cast<size_t>(s.ho) * s.wo;
  const size_t NL = L * s.n;
  const bool pointwise = (s.kh == 1 && s.kw == 1 && stride == 1 && pad == 0);

  // Saved for the weight-gradient GEMM in backward.
  auto cols = std::make_shared<FloatVec>();
  cols->resize(static_cast<size_t>(K) * NL);
#pragma omp parallel for schedule(static)
  for (int img = 0; img < s.n; ++img) {
    const float* xin = x->value.data.data() + static_cast<size_t>(img) * s.ci * s.h * s.w;
    float* cbuf = cols->data() + static_cast<size_t>(img) * L;
    if (pointwise) {
      for (int c = 0; c < s.ci; ++c)
        std::memcpy(cbuf + c * NL, xin + c * L, sizeof(float) * L);
    } else {
      im2col(xin, s, cbuf, NL);
    }
  }

  FloatVec ytmp;  // Co x (N*L)
  ytmp.resize(static_cast<size_t>(s.co) * NL);
  sgemm(false, false, s.co, static_cast<int>(NL), K, 1.0f, w->value.data.data(), K,
        cols->data(), static_cast<int>(NL), 0.0f, ytmp.data(), static_cast<int>(NL));

  Tensor y = Tensor::uninit({s.n, s.co, s.ho, s.wo});
#pragma omp parallel for schedule(static)
  for (int img = 0; img < s.n; ++img) {
    for (int c = 0; c < s.co; ++c) {
      const float* src = ytmp.data() + c * NL + static_cast<size_t>(img) * L;
      float* dst = y.data.data() + (static_cast<size_t>(img) * s.co + c) * L;
      float bias = b->value.data[c];
      for (size_t i = 0; i < L; ++i) dst[i] = src[i] + bias;
    }
  }

  auto bwd = [x, w, b, s, K, L, NL, pointwise, cols](Node& node) {
    const bool need_w = w->needs_grad;
    const bool need_x = x->needs_grad;

    FloatVec dytmp;  // Co x (N*L)
    dytmp.resize(static_cast<size_t>(s.co) * NL);
#pragma omp parallel for schedule(static)
    for (int img = 0; img < s.n; ++img)
      for (int c = 0; c < s.co; ++c)
        std::memcpy(dytmp.data() + c * NL + static_cast<size_t>(img) * L,
                    node.grad.data.data() + (static_cast<size_t>(img) * s.co + c) * L,
                    sizeof(float) * L);

    if (b->needs_grad) {
      float* db = b->ensure_grad().data.data();
      for (int c = 0; c < s.co; ++c) {
        const float* row = dytmp.data() + c * NL;
        double acc = 0.0;
        for (size_t i = 0; i < NL; ++i) acc += row[i];
        db[c] += static_cast<float>(acc);
      }
    }
    if (need_w)
      sgemm(false, true, s.co, K, static_cast<int>(NL), 1.0f, dytmp.data(),
            static_cast<int>(NL), cols->data(), static_cast<int>(NL), 1.0f,
            w->ensure_grad().data.data(), K);
    if (need_x) {
      x->ensure_grad();
      FloatVec dcol;  // K x (N*L)
      dcol.resize(static_cast<size_t>(K) * NL);
      sgemm(true, false, K, static_cast<int>(NL), s.co, 1.0f, w->value.data.data(), K,
            dytmp.data(), static_cast<int>(NL), 0.0f, dcol.data(), static_cast<int>(NL));
#pragma omp parallel for schedule(static)
      for (int img = 0; img < s.n; ++img) {
        float* dxi = x->grad.data.data() + static_cast<size_t>(img) * s.ci * s.h * s.w;
        const float* dci = dcol.data() + static_cast<size_t>(img) * L;
        if (pointwise) {
          for (int c = 0; c < s.ci; ++c) {
            const float* src = dci + c * NL;
            float* dst = dxi + c * L;
            for (size_t i = 0; i < L; ++i) dst[i] += src[i];
          }
        } else {
          col2im_add(dci, s, NL, dxi);
        }
      }
    }
  };
  return t.record(std::move(y), {x, w, b}, bwd, w->name + ":conv");
}

Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups, float eps) {
  const Tensor& xv = x->value;
  check(xv.shape.size() == 4, "group_norm expects 4D");
  int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  check(c % groups == 0, "group_norm: channels not divisible by groups");
  int cpg = c / groups;
  int64_t gsize = static_cast<int64_t>(cpg) * hw;

  Tensor y = Tensor::uninit(xv.shape);
  auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * groups);
  auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * groups);

#pragma omp parallel for schedule(static)
  for (int img = 0; img < n; ++img) {
    for (int g = 0; g < groups; ++g) {
      const float* xin = xv.data.data() + (static_cast<size_t>(img) * c + g * cpg) * hw;
      double m = 0.0;
      for (int64_t i = 0; i < gsize; ++i) m += xin[i];
      m /= static_cast<double>(gsize);
      double var = 0.0;
      for (int64_t i = 0; i < gsize; ++i) {
        double d = xin[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*mean)[static_cast<size_t>(img) * groups + g] = static_cast<float>(m);
      (*rstd)[static_cast<size_t>(img) * groups + g] = rs;
      float* yout = y.data.data() + (static_cast<size_t>(img) * c + g * cpg) * hw;
      for (int ch = 0; ch < cpg; ++ch) {
        float gm = gamma->value.data[g * cpg + ch];
        float bt = beta->value.data[g * cpg + ch];
        const float* xr = xin + static_cast<size_t>(ch) * hw;
        float* yr = yout + static_cast<size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) yr[i] = (xr[i] - static_cast<float>(m)) * rs * gm + bt;
      }
    }
  }

  auto bwd = [x, gamma, beta, n, c, hw, groups, cpg, gsize, mean, rstd](Node& node) {
    const float* dy = node.grad.data.data();
    const float* xv2 = x->value.data.data();
    float* dx = x->needs_grad ? x->ensure_grad().data.data() : nullptr;
    // Per-image affine grads, reduced in image order below.
    std::vector<double> dg_per(static_cast<size_t>(n) * c, 0.0);
    std::vector<double> db_per(static_cast<size_t>(n) * c, 0.0);
#pragma omp parallel for schedule(static)
    for (int img = 0; img < n; ++img) {
      for (int g = 0; g < groups; ++g) {
        size_t base = (static_cast<size_t>(img) * c + g * cpg) * hw;
        float m = (*mean)[static_cast<size_t>(img) * groups + g];
        float rs = (*rstd)[static_cast<size_t>(img) * groups + g];
        double sum1 = 0.0, sum2 = 0.0;
        for (int ch = 0; ch < cpg; ++ch) {
          float gm = gamma->value.data[g * cpg + ch];
          const float* xr = xv2 + base + static_cast<size_t>(ch) * hw;
          const float* dyr = dy + base + static_cast<size_t>(ch) * hw;
          double dg = 0.0, db = 0.0;
          for (int i = 0; i < hw; ++i) {
            float xh = (xr[i] - m) * rs;
            float dyh = dyr[i] * gm;
            sum1 += dyh;
            sum2 += static_cast<double>(dyh) * xh;
            dg += static_cast<double>(dyr[i]) * xh;
            db += dyr[i];
          }
          dg_per[static_cast<size_t>(img) * c + g * cpg + ch] = dg;
          db_per[static_cast<size_t>(img) * c + g * cpg + ch] = db;
        }
        if (!dx) continue;
        float inv = 1.0f / static_cast<float>(gsize);
        float s1 = static_cast<float>(sum1) * inv;
        float s2 = static_cast<float>(sum2) * inv;
        for (int ch = 0; ch < cpg; ++ch) {
          float gm = gamma->value.data[g * cpg + ch];
          const float* xr = xv2 + base + static_cast<size_t>(ch) * hw;
          const float* dyr = dy + base + static_cast<size_t>(ch) * hw;
          float* dxr = dx + base + static_cast<size_t>(ch) * hw;
          for (int i = 0; i < hw; ++i) {
            float xh = (xr[i] - m) * rs;
            float dyh = dyr[i] * gm;
            dxr[i] += rs * (dyh - s1 - xh * s2);
          }
        }
      }
    }
    if (gamma->needs_grad) {
      float* dgamma = gamma->ensure_grad().data.data();
      for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch)
          dgamma[ch] += static_cast<float>(dg_per[static_cast<size_t>(img) * c + ch]);
    }
    if (beta->needs_grad) {
      float* dbeta = beta->ensure_grad().data.data();
      for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch)
          dbeta[ch] += static_cast<float>(db_per[static_cast<size_t>(img) * c + ch]);
    }
  };
  return t.record(std::move(y), {x, gamma, beta}, bwd, gamma->name + ":gn");
}

Var relu(Tape& t, Var x) {
  Tensor y = Tensor::uninit(x->value.shape);
  const int64_t n = y.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y.data[i] = std::max(0.0f, x->value.data[i]);
  auto bwd = [x](Node& node) {
    if (!x->needs_grad) return;
    float* dx = x->ensure_grad().data.data();
    const int64_t m = node.grad.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
      if (x->value.data[i] > 0.0f) dx[i] += node.grad.data[i];
  };
  return t.record(std::move(y), {x}, bwd, x->name + ":relu");
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = Tensor::uninit(x->value.shape);
  const int64_t n = y.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    float v = x->value.data[i];
    y.data[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                          : std::exp(v) / (1.0f + std::exp(v));
  }
  auto bwd = [x](Node& node) {
    if (!x->needs_grad) return;
    float* dx = x->ensure_grad().data.data();
    for (size_t i = 0; i < node.grad.data.size(); ++i) {
      float s = node.value.data[i];
      dx[i] += node.grad.data[i] * s * (1.0f - s);
    }
  };
  return t.record(std::move(y), {x}, bwd, x->name + ":sigmoid");
}

Var affine(Tape& t, Var x, float mul, float add) {
  Tensor y = Tensor::uninit(x->value.shape);
  const int64_t n = y.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y.data[i] = x->value.data[i] * mul + add;
  auto bwd = [x, mul](Node& node) {
    if (!x->needs_grad) return;
    float* dx = x->ensure_grad().data.data();
    for (size_t i = 0; i < node.grad.data.size(); ++i) dx[i] += node.grad.data[i] * mul;
  };
  return t.record(std::move(y), {x}, bwd, x->name + ":affine");
}

Var upsample2x(Tape& t, Var x) {
  const Tensor& xv = x->value;
  check(xv.shape.size() == 4, "upsample2x expects 4D");
  int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor y = Tensor::uninit({n, c, h * 2, w * 2});
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < n * c; ++nc) {
    const float* src = xv.data.data() + static_cast<size_t>(nc) * h * w;
    float* dst = y.data.data() + static_cast<size_t>(nc) * h * w * 4;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        float v = src[yy * w + xx];
        float* d = dst + (2 * yy) * (2 * w) + 2 * xx;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }
  auto bwd = [x, n, c, h, w](Node& node) {
    if (!x->needs_grad) return;
    float* dx = x->ensure_grad().data.data();
    const float* dy = node.grad.data.data();
    for (int nc = 0; nc < n * c; ++nc) {
      float* dsrc = dx + static_cast<size_t>(nc) * h * w;
      const float* ddst = dy + static_cast<size_t>(nc) * h * w * 4;
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const float* d = ddst + (2 * yy) * (2 * w) + 2 * xx;
          dsrc[yy * w + xx] += d[0] + d[1] + d[2 * w] + d[2 * w + 1];
        }
    }
  };
  return t.record(std::move(y), {x}, bwd, x->name + ":up2");
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
  check(!xs.empty(), "concat: empty input");
  int n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int ctot = 0;
  for (const Var& v : xs) {
    check(v->value.shape.size() == 4, "concat expects 4D");
    check(v->value.dim(0) == n && v->value.dim(2) == h && v->value.dim(3) == w,
          "concat spatial mismatch");
    ctot += v->value.dim(1);
  }
  Tensor y = Tensor::uninit({n, ctot, h, w});
  size_t hw = static_cast<size_t>(h) * w;
#pragma omp parallel for schedule(static)
  for (int img = 0; img < n; ++img) {
    size_t off = 0;
    for (const Var& v : xs) {
      int ci = v->value.dim(1);
      std::memcpy(y.data.data() + (static_cast<size_t>(img) * ctot + off) * hw,
                  v->value.data.data() + static_cast<size_t>(img) * ci * hw,
                  sizeof(float) * ci * hw);
      off += ci;
    }
  }
  auto xs_copy = xs;
  auto bwd = [xs_copy, n, ctot, hw](Node& node) {
    const float* dy = node.grad.data.data();
    for (int img = 0; img < n; ++img) {
      size_t off = 0;
      for (const Var& v : xs_copy) {
        size_t ci = static_cast<size_t>(v->value.dim(1));
        if (v->needs_grad) {
          float* dst = v->ensure_grad().data.data() + static_cast<size_t>(img) * ci * hw;
          const float* src = dy + (static_cast<size_t>(img) * ctot + off) * hw;
          for (size_t i = 0; i < ci * hw; ++i) dst[i] += src[i];
        }
        off += ci;
      }
    }
  };
  return t.record(std::move(y), xs, bwd, "concat");
}

Var stop_gradient(Tape& t, Var x) {
  return t.leaf(x->value, x->name + ":stopgrad");
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params)
    for (float g : p->grad.data) sq += static_cast<double>(g) * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    float scale = static_cast<float>(max_norm / norm);
    for (Parameter* p : params)
      for (float& g : p->grad.data) g *= scale;
  }
  return norm;
}

void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg, int64_t t) {
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : params) {
    float* v = p->value.data.data();
    float* g = p->grad.data.data();
    float* m = p->adam_m.data.data();
    float* s = p->adam_v.data.data();
    size_t n = p->value.data.size();
    for (size_t i = 0; i < n; ++i) {
      m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
      s[i] = static_cast<float>(cfg.beta2 * s[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
      double mh = m[i] / bc1;
      double sh = s[i] / bc2;
      v[i] -= static_cast<float>(cfg.lr * mh / (std::sqrt(sh) + cfg.eps));
    }
  }
}

void he_normal_init(Tensor& w, int fan_in, Rng& rng) {
  double std_dev = std::sqrt(2.0 / std::max(1, fan_in));
  for (float& v : w.data) v = static_cast<float>(rng.gaussian() * std_dev);
}

}  // namespace ctdet::nn
