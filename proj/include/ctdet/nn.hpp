// SPDX-License-Identifier: Apache-2.0
//
// Minimal CPU tape autodiff for the detector networks. Ops execute eagerly
// and record themselves on a Tape; Tape::backward walks the records in
// reverse creation order (creation order is a topological order by
// construction). Convolutions run as im2col + sgemm.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ctdet/common.hpp"

namespace ctdet::nn {

// Allocator that skips value-initialization on resize; buffers that are
// fully overwritten (conv outputs, im2col scratch) shouldn't pay a memset.
template <class T>
struct NoInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using FloatVec = std::vector<float, NoInitAllocator<float>>;

struct Tensor {
  std::vector<int> shape;  // NCHW for feature maps
  FloatVec data;

  Tensor() = default;
  // Zero-filled.
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.resize(numel());
    std::fill(data.begin(), data.end(), 0.0f);
  }
  // Contents unspecified; caller must write every element.
  static Tensor uninit(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(t.numel());
    return t;
  }
  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
};

struct Parameter {
  std::string name;
  std::string subsystem;
  bool used_by_detection = false;
  bool used_by_contour = false;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  std::string name;
  Tensor value;
  Tensor grad;  // allocated on demand
  bool needs_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;

  Tensor& ensure_grad() {
    if (grad.data.empty()) grad = Tensor(value.shape);
    return grad;
  }
  bool has_grad() const { return !grad.data.empty(); }
};

class Tape {
 public:
  Var leaf(Tensor value, std::string name);
  Var leaf_param(Parameter& p);
  Var record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd,
             std::string name);
  // Propagates grads seeded on output nodes down to parameter grads.
  void backward();
  const std::vector<Var>& nodes() const { return nodes_; }
  // Name of the first node holding a non-finite value, empty if none.
  std::string first_non_finite() const;

 private:
  std::vector<Var> nodes_;
};

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups, float eps = 1e-5f);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var affine(Tape& t, Var x, float mul, float add);
Var upsample2x(Tape& t, Var x);
Var concat_channels(Tape& t, const std::vector<Var>& xs);
Var stop_gradient(Tape& t, Var x);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Returns the pre-clip global gradient norm.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);
void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg, int64_t t);

void he_normal_init(Tensor& w, int fan_in, Rng& rng);

}  // namespace ctdet::nn
