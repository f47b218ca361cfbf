#include "poseflow/autograd.hpp"

#include <cmath>
#include <cstring>

#include "poseflow/errors.hpp"

namespace poseflow {

Var Tape::constant(Tensor v) {
  nodes_.push_back(Node{std::move(v), {}, {}, nullptr, false, nullptr});
  return Var{this, last_id()};
}

Var Tape::leaf(Tensor v) {
  nodes_.push_back(Node{std::move(v), {}, {}, nullptr, true, nullptr});
  return Var{this, last_id()};
}

Var Tape::param(Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  nodes_.push_back(Node{p.value, {}, {}, nullptr, true, &p});
  param_nodes_[&p] = last_id();
  return Var{this, last_id()};
}

Tensor& Tape::grad_accum(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

const Tensor* Tape::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  return n.grad.empty() ? nullptr : &n.grad;
}

Var Tape::make(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> back) {
  bool needs = false;
  for (int p : parents) needs = needs || nodes_[static_cast<size_t>(p)].needs;
  if (!needs) back = nullptr;
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(back), needs, nullptr});
  return Var{this, last_id()};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: var from another tape");
  const Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grad_accum(loss.id)[0] += 1.f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad.empty() && n.back) n.back(*this, id);
  }
  for (auto& [p, id] : param_nodes_) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) continue;
    Param* pm = n.bound;
    pm->ensure_grad();
    pm->grad.add_(n.grad);
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on invalid var");
  return *a.tape;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  out.add_(bv);
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    if (tp.needs_at(ai)) tp.grad_accum(ai).add_(gy);
    if (tp.needs_at(bi)) tp.grad_accum(bi).add_(gy);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    if (tp.needs_at(ai)) tp.grad_accum(ai).add_(gy);
    if (tp.needs_at(bi)) {
      Tensor& g = tp.grad_accum(bi);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& av2 = tp.value_at(ai);
    const Tensor& bv2 = tp.value_at(bi);
    if (tp.needs_at(ai)) {
      Tensor& g = tp.grad_accum(ai);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy[i] * bv2[i];
    }
    if (tp.needs_at(bi)) {
      Tensor& g = tp.grad_accum(bi);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy[i] * av2[i];
    }
  });
}

Var add_scalar(Var a, float c) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
    if (tp.needs_at(ai)) tp.grad_accum(ai).add_(tp.grad_value(self));
  });
}

Var mul_scalar(Var a, float c) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  out.scale_(c);
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, c](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * gy[i];
  });
}

Var mul_cbroadcast(Var x, Var g) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.val(x);
  const Tensor& gv = t.val(g);
  if (xv.rank() != 3 || gv.rank() != 3 || gv.dim(0) != 1 || gv.dim(1) != xv.dim(1) ||
      gv.dim(2) != xv.dim(2))
    throw std::invalid_argument("mul_cbroadcast: expects x[C,H,W], g[1,H,W]");
  const int C = xv.dim(0);
  const int64_t P = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
  Tensor out = xv;
  for (int c = 0; c < C; ++c)
    for (int64_t p = 0; p < P; ++p) out[c * P + p] *= gv[p];
  int xi = x.id, gi = g.id;
  return t.make(std::move(out), {xi, gi}, [xi, gi, C, P](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv2 = tp.value_at(xi);
    const Tensor& gv2 = tp.value_at(gi);
    if (tp.needs_at(xi)) {
      Tensor& gx = tp.grad_accum(xi);
      for (int c = 0; c < C; ++c)
        for (int64_t p = 0; p < P; ++p) gx[c * P + p] += gy[c * P + p] * gv2[p];
    }
    if (tp.needs_at(gi)) {
      Tensor& gg = tp.grad_accum(gi);
      for (int c = 0; c < C; ++c)
        for (int64_t p = 0; p < P; ++p) gg[p] += gy[c * P + p] * xv2[c * P + p];
    }
  });
}

Var sum_channels(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3)
    throw std::invalid_argument("sum_channels: expects x[C,H,W]");
  const int C = xv.dim(0);
  const int64_t P = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
  Tensor out({1, xv.dim(1), xv.dim(2)});
  for (int64_t p = 0; p < P; ++p) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += xv[c * P + p];
    out[p] = static_cast<float>(acc);
  }
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi, C, P](Tape& tp, int self) {
    if (!tp.needs_at(xi)) return;
    const Tensor& gy = tp.grad_value(self);
    Tensor& gx = tp.grad_accum(xi);
    for (int c = 0; c < C; ++c)
      for (int64_t p = 0; p < P; ++p) gx[c * P + p] += gy[p];
  });
}

Var scale_by(Var x, Var s) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.val(x);
  const Tensor& sv = t.val(s);
  if (sv.numel() != 1)
    throw std::invalid_argument("scale_by: scale must be a single element");
  const float sc = sv[0];
  Tensor out = xv;
  out.scale_(sc);
  int xi = x.id, si = s.id;
  return t.make(std::move(out), {xi, si}, [xi, si, sc](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    if (tp.needs_at(xi)) {
      Tensor& gx = tp.grad_accum(xi);
      for (int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * sc;
    }
    if (tp.needs_at(si)) {
      const Tensor& xv2 = tp.value_at(xi);
      double acc = 0.0;
      for (int64_t i = 0; i < gy.numel(); ++i)
        acc += double(gy[i]) * xv2[i];
      tp.grad_accum(si)[0] += static_cast<float>(acc);
    }
  });
}

Var concat_c(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_c: empty");
  Tape& t = tape_of(xs[0]);
  std::vector<const Tensor*> vals;
  vals.reserve(xs.size());
  for (Var v : xs) vals.push_back(&t.val(v));
  Tensor out = concat_tensors_c(vals);
  std::vector<int> parents;
  std::vector<int64_t> sizes;
  for (size_t i = 0; i < xs.size(); ++i) {
    parents.push_back(xs[i].id);
    sizes.push_back(vals[i]->numel());
  }
  auto ids = parents;
  return t.make(std::move(out), std::move(parents), [ids, sizes](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    int64_t off = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (tp.needs_at(ids[i])) {
        Tensor& g = tp.grad_accum(ids[i]);
        for (int64_t j = 0; j < sizes[i]; ++j) g[j] += gy[off + j];
      }
      off += sizes[i];
    }
  });
}

Var detach(Var a) {
  Tape& t = tape_of(a);
  return t.constant(t.val(a));
}

Var abs_v(Var a) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) {
      float s = xv[i] > 0.f ? 1.f : (xv[i] < 0.f ? -1.f : 0.f);
      g[i] += s * gy[i];
    }
  });
}

Var leaky_relu(Var a, float slope) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.f) out[i] *= slope;
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, slope](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (xv[i] > 0.f ? 1.f : slope) * gy[i];
  });
}

Var sigmoid_v(Var a) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i) {
    float x = out[i];
    out[i] = x >= 0.f ? 1.f / (1.f + std::exp(-x)) : std::exp(x) / (1.f + std::exp(x));
  }
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& yv = tp.value_at(self);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += yv[i] * (1.f - yv[i]) * gy[i];
  });
}

Var tanh_v(Var a) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& yv = tp.value_at(self);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (1.f - yv[i] * yv[i]) * gy[i];
  });
}

Var pow_scalar(Var a, float p) {
  Tape& t = tape_of(a);
  Tensor out = t.val(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(out[i], p);
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, p](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv = tp.value_at(ai);
    const Tensor& yv = tp.value_at(self);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += p * yv[i] / xv[i] * gy[i];
  });
}

Var scale_channels(Var a, const std::vector<float>& s) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  if (av.rank() != 3 || static_cast<size_t>(av.dim(0)) != s.size())
    throw std::invalid_argument("scale_channels: bad channel count");
  const int64_t P = static_cast<int64_t>(av.dim(1)) * av.dim(2);
  Tensor out = av;
  for (size_t c = 0; c < s.size(); ++c)
    for (int64_t p = 0; p < P; ++p) out[static_cast<int64_t>(c) * P + p] *= s[c];
  int ai = a.id;
  std::vector<float> sc = s;
  return t.make(std::move(out), {ai}, [ai, sc, P](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    Tensor& g = tp.grad_accum(ai);
    for (size_t c = 0; c < sc.size(); ++c)
      for (int64_t p = 0; p < P; ++p) {
        int64_t i = static_cast<int64_t>(c) * P + p;
        g[i] += sc[c] * gy[i];
      }
  });
}

Var softmax_c(Var logits) {
  Tape& t = tape_of(logits);
  const Tensor& zv = t.val(logits);
  if (zv.rank() != 3) throw std::invalid_argument("softmax_c: expects [C,H,W]");
  const int C = zv.dim(0);
  const int64_t P = static_cast<int64_t>(zv.dim(1)) * zv.dim(2);
  Tensor out = zv;
  for (int64_t p = 0; p < P; ++p) {
    float m = -1e30f;
    for (int c = 0; c < C; ++c) m = std::max(m, zv[c * P + p]);
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(zv[c * P + p] - m));
    for (int c = 0; c < C; ++c)
      out[c * P + p] = static_cast<float>(std::exp(static_cast<double>(zv[c * P + p] - m)) / denom);
  }
  int ai = logits.id;
  return t.make(std::move(out), {ai}, [ai, C, P](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& sv = tp.value_at(self);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t p = 0; p < P; ++p) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += static_cast<double>(gy[c * P + p]) * sv[c * P + p];
      for (int c = 0; c < C; ++c)
        g[c * P + p] += sv[c * P + p] * (gy[c * P + p] - static_cast<float>(dot));
    }
  });
}

Var mean_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const int64_t N = av.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) acc += av[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(N)));
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, N](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const float gy = tp.grad_value(self)[0] / static_cast<float>(N);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < N; ++i) g[i] += gy;
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  double acc = 0.0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  int ai = a.id;
  const int64_t N = av.numel();
  return t.make(std::move(out), {ai}, [ai, N](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const float gy = tp.grad_value(self)[0];
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < N; ++i) g[i] += gy;
  });
}

Var l1_loss(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "l1_loss");
  const int64_t N = av.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) acc += std::fabs(static_cast<double>(av[i]) - bv[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(N)));
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi, N](Tape& tp, int self) {
    const float gy = tp.grad_value(self)[0] / static_cast<float>(N);
    const Tensor& av2 = tp.value_at(ai);
    const Tensor& bv2 = tp.value_at(bi);
    const bool na = tp.needs_at(ai), nb = tp.needs_at(bi);
    if (!na && !nb) return;
    Tensor* ga = na ? &tp.grad_accum(ai) : nullptr;
    Tensor* gb = nb ? &tp.grad_accum(bi) : nullptr;
    for (int64_t i = 0; i < N; ++i) {
      float d = av2[i] - bv2[i];
      float s = d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f);
      if (ga) (*ga)[i] += s * gy;
      if (gb) (*gb)[i] -= s * gy;
    }
  });
}

Var mse_to(Var a, float target) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const int64_t N = av.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    double d = static_cast<double>(av[i]) - target;
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(N)));
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, target, N](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const float gy = tp.grad_value(self)[0] / static_cast<float>(N);
    const Tensor& av2 = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t i = 0; i < N; ++i) g[i] += 2.f * (av2[i] - target) * gy;
  });
}

Var charbonnier_loss(Var a, Var b, float eps, float alpha) {
  Tape& t = tape_of(a);
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "charbonnier_loss");
  if (eps <= 0.f || alpha <= 0.f || alpha > 1.f)
    throw std::invalid_argument("charbonnier_loss: need eps > 0 and alpha in (0,1]");
  const int64_t N = av.numel();
  const double e2 = static_cast<double>(eps) * eps;
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    double d = static_cast<double>(av[i]) - bv[i];
    acc += std::pow(d * d + e2, static_cast<double>(alpha));
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(N)));
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi, e2, alpha, N](Tape& tp, int self) {
    const double gy = tp.grad_value(self)[0] / static_cast<double>(N);
    const Tensor& av2 = tp.value_at(ai);
    const Tensor& bv2 = tp.value_at(bi);
    const bool na = tp.needs_at(ai), nb = tp.needs_at(bi);
    if (!na && !nb) return;
    Tensor* ga = na ? &tp.grad_accum(ai) : nullptr;
    Tensor* gb = nb ? &tp.grad_accum(bi) : nullptr;
    for (int64_t i = 0; i < N; ++i) {
      double d = static_cast<double>(av2[i]) - bv2[i];
      double dd = gy * alpha * std::pow(d * d + e2, static_cast<double>(alpha) - 1.0) * 2.0 * d;
      if (ga) (*ga)[i] += static_cast<float>(dd);
      if (gb) (*gb)[i] -= static_cast<float>(dd);
    }
  });
}

Var ce_with_logits(Var logits, const Tensor& onehot) {
  Tape& t = tape_of(logits);
  const Tensor& zv = t.val(logits);
  check_same_shape(zv, onehot, "ce_with_logits");
  if (zv.rank() != 3) throw std::invalid_argument("ce_with_logits: expects [C,H,W]");
  const int C = zv.dim(0);
  const int64_t P = static_cast<int64_t>(zv.dim(1)) * zv.dim(2);
  double acc = 0.0;
  for (int64_t p = 0; p < P; ++p) {
    double m = -1e300;
    for (int c = 0; c < C; ++c) m = std::max(m, static_cast<double>(zv[c * P + p]));
    double lse = 0.0, tz = 0.0;
    for (int c = 0; c < C; ++c) {
      lse += std::exp(static_cast<double>(zv[c * P + p]) - m);
      tz += static_cast<double>(onehot[c * P + p]) * zv[c * P + p];
    }
    acc += m + std::log(lse) - tz;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(P)));
  int ai = logits.id;
  Tensor target = onehot;
  return t.make(std::move(out), {ai}, [ai, target, C, P](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const float gy = tp.grad_value(self)[0] / static_cast<float>(P);
    const Tensor& zv2 = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    for (int64_t p = 0; p < P; ++p) {
      double m = -1e300;
      for (int c = 0; c < C; ++c) m = std::max(m, static_cast<double>(zv2[c * P + p]));
      double denom = 0.0;
      for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(zv2[c * P + p]) - m);
      for (int c = 0; c < C; ++c) {
        double s = std::exp(static_cast<double>(zv2[c * P + p]) - m) / denom;
        g[c * P + p] += static_cast<float>((s - target[c * P + p]) * gy);
      }
    }
  });
}

Var gram_v(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw std::invalid_argument("gram_v: expects [C,H,W]");
  const int C = xv.dim(0);
  const int64_t P = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
  Tensor out({C, C});
  for (int i = 0; i < C; ++i)
    for (int j = i; j < C; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < P; ++p)
        acc += static_cast<double>(xv[i * P + p]) * xv[j * P + p];
      float v = static_cast<float>(acc / static_cast<double>(P));
      out[i * C + j] = v;
      out[j * C + i] = v;
    }
  int ai = x.id;
  return t.make(std::move(out), {ai}, [ai, C, P](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv2 = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    const float inv = 1.f / static_cast<float>(P);
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j) {
        float w = (gy[i * C + j] + gy[j * C + i]) * inv;
        if (w == 0.f) continue;
        for (int64_t p = 0; p < P; ++p) g[i * P + p] += w * xv2[j * P + p];
      }
  });
}

Var tv_loss_v(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw std::invalid_argument("tv_loss_v: expects [C,H,W]");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    if (W > 1) {
      double acc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx + 1 < W; ++xx)
          acc += std::fabs(static_cast<double>(xv.at(c, y, xx + 1)) - xv.at(c, y, xx));
      total += acc / (static_cast<double>(H) * (W - 1));
    }
    if (H > 1) {
      double acc = 0.0;
      for (int y = 0; y + 1 < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          acc += std::fabs(static_cast<double>(xv.at(c, y + 1, xx)) - xv.at(c, y, xx));
      total += acc / (static_cast<double>(H - 1) * W);
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  int ai = x.id;
  return t.make(std::move(out), {ai}, [ai, C, H, W](Tape& tp, int self) {
    if (!tp.needs_at(ai)) return;
    const float gy = tp.grad_value(self)[0];
    const Tensor& xv2 = tp.value_at(ai);
    Tensor& g = tp.grad_accum(ai);
    auto sign = [](float d) { return d > 0.f ? 1.f : (d < 0.f ? -1.f : 0.f); };
    for (int c = 0; c < C; ++c) {
      if (W > 1) {
        const float s = gy / (static_cast<float>(H) * (W - 1));
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx + 1 < W; ++xx) {
            float d = sign(xv2.at(c, y, xx + 1) - xv2.at(c, y, xx)) * s;
            g.at(c, y, xx + 1) += d;
            g.at(c, y, xx) -= d;
          }
      }
      if (H > 1) {
        const float s = gy / (static_cast<float>(H - 1) * W);
        for (int y = 0; y + 1 < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            float d = sign(xv2.at(c, y + 1, xx) - xv2.at(c, y, xx)) * s;
            g.at(c, y + 1, xx) += d;
            g.at(c, y, xx) -= d;
          }
      }
    }
  });
}

Tensor concat_tensors_c(const std::vector<const Tensor*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: empty");
  const int H = xs[0]->dim(1), W = xs[0]->dim(2);
  int C = 0;
  for (auto* x : xs) {
    if (x->rank() != 3 || x->dim(1) != H || x->dim(2) != W)
      throw std::invalid_argument("concat: spatial dims differ");
    C += x->dim(0);
  }
  Tensor out({C, H, W});
  int64_t off = 0;
  for (auto* x : xs) {
    std::memcpy(out.data() + off, x->data(), sizeof(float) * static_cast<size_t>(x->numel()));
    off += x->numel();
  }
  return out;
}

}  // namespace poseflow
