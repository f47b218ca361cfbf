#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "poseflow/tensor.hpp"

namespace poseflow {

// A learnable tensor. Gradients accumulate across backward() calls until
// zero_grad(); optimizers consume value/grad pairs by name via ParamStore.
struct Param {
  Tensor value;
  Tensor grad;
  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor::zeros_like(value);
  }
  void zero_grad() { ensure_grad(); grad.fill_(0.f); }
};

// Weight/bias pair for a conv or deconv layer.
struct ConvParam {
  Param w;
  Param b;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Define-by-run reverse-mode tape. Nodes are created in topological order, so
// backward() is a single reverse sweep. Single-threaded and deterministic.
class Tape {
 public:
  Var constant(Tensor v);
  Var leaf(Tensor v);      // differentiable input, grad kept on the tape
  Var param(Param& p);     // differentiable, grad added into p.grad by backward()

  const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Tensor& value_at(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_at(int id) const { return nodes_[static_cast<size_t>(id)].needs; }
  bool needs_grad(Var v) const { return needs_at(v.id); }
  const Tensor& grad_value(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  // Gradient buffer for a node, zero-initialized on first use.
  Tensor& grad_accum(int id);
  // Gradient of a leaf after backward(); nullptr if it never received one.
  const Tensor* grad_of(Var v) const;

  void backward(Var loss);
  size_t size() const { return nodes_.size(); }

  // Op plumbing: create a node. `back(tape, self_id)` may be nullptr when no
  // parent needs gradients; it reads grad_value(self_id) and scatters into
  // parents via grad_accum.
  Var make(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> back);
  int last_id() const { return static_cast<int>(nodes_.size()) - 1; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
    bool needs = false;
    Param* bound = nullptr;
  };
  std::deque<Node> nodes_;  // deque: stable references while appending
  std::unordered_map<const Param*, int> param_nodes_;
};

// ---- elementwise / shape ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, float c);
Var mul_scalar(Var a, float c);
// x:[C,H,W] * g:[1,H,W], gate broadcast over channels
Var mul_cbroadcast(Var x, Var g);
// x:[C,H,W] -> [1,H,W], per-pixel sum over channels
Var sum_channels(Var x);
// x scaled by a single-element Var (e.g. 1/sigma for spectral normalization)
Var scale_by(Var x, Var s);
Var concat_c(const std::vector<Var>& xs);
Var detach(Var a);
Var abs_v(Var a);
Var leaky_relu(Var a, float slope);
inline Var relu(Var a) { return leaky_relu(a, 0.f); }
Var sigmoid_v(Var a);
Var tanh_v(Var a);
Var pow_scalar(Var a, float p);  // requires a > 0 elementwise
Var scale_channels(Var a, const std::vector<float>& s);
Var softmax_c(Var logits);  // per-pixel softmax over channel dim

// ---- reductions / losses (double accumulation inside) ----
Var mean_all(Var a);
Var sum_all(Var a);
Var l1_loss(Var a, Var b);                                  // mean |a-b|
Var mse_to(Var a, float target);                            // mean (a-target)^2
Var charbonnier_loss(Var a, Var b, float eps, float alpha); // mean ((d^2+eps^2)^alpha)
Var ce_with_logits(Var logits, const Tensor& onehot);       // mean over pixels
Var gram_v(Var x);                                          // [C,C] = F F^T / (H*W)
Var tv_loss_v(Var x);  // sum over channels+directions of mean |forward diff|

// ---- nn ops (conv_ops.cpp) ----
// x:[Ci,H,W], w:[Co,Ci,kh,kw], b:[Co] or invalid Var for none
Var conv2d(Var x, Var w, Var b, int stride, int pad);
// x:[Ci,H,W], w:[Ci,Co,kh,kw]; out [(H-1)*s - 2p + kh]
Var deconv2d(Var x, Var w, Var b, int stride, int pad);
Var instance_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
Var maxpool2x2(Var x);
Var resize_bilinear_v(Var x, int out_h, int out_w);

// ---- raw tensor-level counterparts (oracles, metrics, data paths) ----
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor maxpool2x2_forward(const Tensor& x);
Tensor concat_tensors_c(const std::vector<const Tensor*>& xs);

}  // namespace poseflow
