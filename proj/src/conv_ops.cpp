#include <Eigen/Dense>
#include <cmath>

#include "poseflow/autograd.hpp"

namespace poseflow {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

void conv_out_dims(int H, int W, int kh, int kw, int stride, int pad, int* oh, int* ow) {
  *oh = (H + 2 * pad - kh) / stride + 1;
  *ow = (W + 2 * pad - kw) / stride + 1;
  if (*oh <= 0 || *ow <= 0) throw std::invalid_argument("conv: nonpositive output dims");
}

// col is [Ci*kh*kw, OH*OW] row-major.
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int OH, OW;
  conv_out_dims(H, W, kh, kw, stride, pad, &OH, &OW);
  Tensor col({C * kh * kw, OH * OW});
  float* cd = col.data();
  const float* xd = x.data();
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        float* row = cd + (static_cast<int64_t>((c * kh + dy) * kw + dx)) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride + dy - pad;
          float* out = row + static_cast<int64_t>(oy) * OW;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < OW; ++ox) out[ox] = 0.f;
            continue;
          }
          const float* src = xd + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + dx - pad;
            out[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.f;
          }
        }
      }
  return col;
}

// Scatter-add of a col matrix back into an image-shaped accumulator.
void col2im_add(const Tensor& col, Tensor& x, int kh, int kw, int stride, int pad) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int OH, OW;
  conv_out_dims(H, W, kh, kw, stride, pad, &OH, &OW);
  const float* cd = col.data();
  float* xd = x.data();
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        const float* row = cd + (static_cast<int64_t>((c * kh + dy) * kw + dx)) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= H) continue;
          float* dst = xd + (static_cast<int64_t>(c) * H + iy) * W;
          const float* src = row + static_cast<int64_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + dx - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
}

Tensor conv2d_bwd_data(const Tensor& gy, const Tensor& w, int Hin, int Win, int stride, int pad) {
  const int Co = w.dim(0), Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t P = static_cast<int64_t>(gy.dim(1)) * gy.dim(2);
  Tensor dcol({Ci * kh * kw, static_cast<int>(P)});
  CMapM Wm(w.data(), Co, Ci * kh * kw);
  CMapM Gy(gy.data(), Co, P);
  MapM Dc(dcol.data(), Ci * kh * kw, P);
  Dc.noalias() = Wm.transpose() * Gy;
  Tensor dx({Ci, Hin, Win});
  col2im_add(dcol, dx, kh, kw, stride, pad);
  return dx;
}

Tensor conv2d_bwd_weights(const Tensor& gy, const Tensor& x, int Co, int Ci, int kh, int kw,
                          int stride, int pad) {
  Tensor col = im2col(x, kh, kw, stride, pad);
  const int64_t P = static_cast<int64_t>(gy.dim(1)) * gy.dim(2);
  Tensor dw({Co, Ci, kh, kw});
  CMapM Gy(gy.data(), Co, P);
  CMapM Cm(col.data(), Ci * kh * kw, P);
  MapM Dw(dw.data(), Co, Ci * kh * kw);
  Dw.noalias() = Gy * Cm.transpose();
  return dw;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
  if (x.dim(0) != w.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  const int Co = w.dim(0), Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  int OH, OW;
  conv_out_dims(x.dim(1), x.dim(2), kh, kw, stride, pad, &OH, &OW);
  Tensor col = im2col(x, kh, kw, stride, pad);
  Tensor out({Co, OH, OW});
  const int64_t P = static_cast<int64_t>(OH) * OW;
  CMapM Wm(w.data(), Co, Ci * kh * kw);
  CMapM Cm(col.data(), Ci * kh * kw, P);
  MapM Om(out.data(), Co, P);
  Om.noalias() = Wm * Cm;
  if (b) {
    if (b->numel() != Co) throw std::invalid_argument("conv2d: bias size");
    for (int c = 0; c < Co; ++c) {
      float bv = (*b)[c];
      float* d = out.data() + static_cast<int64_t>(c) * P;
      for (int64_t i = 0; i < P; ++i) d[i] += bv;
    }
  }
  return out;
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  Tape& t = *x.tape;
  const Tensor* bv = b.valid() ? &t.val(b) : nullptr;
  Tensor out = conv2d_forward(t.val(x), t.val(w), bv, stride, pad);
  std::vector<int> parents{x.id, w.id};
  if (b.valid()) parents.push_back(b.id);
  const int xi = x.id, wi = w.id, bi = b.valid() ? b.id : -1;
  return t.make(std::move(out), std::move(parents), [xi, wi, bi, stride, pad](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv = tp.value_at(xi);
    const Tensor& wv = tp.value_at(wi);
    if (tp.needs_at(xi))
      tp.grad_accum(xi).add_(conv2d_bwd_data(gy, wv, xv.dim(1), xv.dim(2), stride, pad));
    if (tp.needs_at(wi))
      tp.grad_accum(wi).add_(conv2d_bwd_weights(gy, xv, wv.dim(0), wv.dim(1), wv.dim(2), wv.dim(3),
                                                stride, pad));
    if (bi >= 0 && tp.needs_at(bi)) {
      Tensor& gb = tp.grad_accum(bi);
      const int Co = gy.dim(0);
      const int64_t P = static_cast<int64_t>(gy.dim(1)) * gy.dim(2);
      for (int c = 0; c < Co; ++c) {
        double acc = 0.0;
        const float* d = gy.data() + static_cast<int64_t>(c) * P;
        for (int64_t i = 0; i < P; ++i) acc += d[i];
        gb[c] += static_cast<float>(acc);
      }
    }
  });
}

// Transposed convolution. w: [Ci, Co, kh, kw]; out dims (H-1)*s - 2p + k.
Var deconv2d(Var x, Var w, Var b, int stride, int pad) {
  Tape& t = *x.tape;
  const Tensor& xv0 = t.val(x);
  const Tensor& wv0 = t.val(w);
  if (xv0.rank() != 3 || wv0.rank() != 4) throw std::invalid_argument("deconv2d: bad ranks");
  if (xv0.dim(0) != wv0.dim(0)) throw std::invalid_argument("deconv2d: channel mismatch");
  const int Ci = wv0.dim(0), Co = wv0.dim(1), kh = wv0.dim(2), kw = wv0.dim(3);
  const int Hin = xv0.dim(1), Win = xv0.dim(2);
  const int Ho = (Hin - 1) * stride - 2 * pad + kh;
  const int Wo = (Win - 1) * stride - 2 * pad + kw;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("deconv2d: nonpositive output dims");

  const int64_t P = static_cast<int64_t>(Hin) * Win;
  Tensor colT({Co * kh * kw, static_cast<int>(P)});
  {
    CMapM Wm(wv0.data(), Ci, Co * kh * kw);
    CMapM Xm(xv0.data(), Ci, P);
    MapM Cm(colT.data(), Co * kh * kw, P);
    Cm.noalias() = Wm.transpose() * Xm;
  }
  Tensor out({Co, Ho, Wo});
  col2im_add(colT, out, kh, kw, stride, pad);
  if (b.valid()) {
    const Tensor& bv = t.val(b);
    if (bv.numel() != Co) throw std::invalid_argument("deconv2d: bias size");
    const int64_t Q = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < Co; ++c) {
      float add = bv[c];
      float* d = out.data() + static_cast<int64_t>(c) * Q;
      for (int64_t i = 0; i < Q; ++i) d[i] += add;
    }
  }
  std::vector<int> parents{x.id, w.id};
  if (b.valid()) parents.push_back(b.id);
  const int xi = x.id, wi = w.id, bi = b.valid() ? b.id : -1;
  return t.make(std::move(out), std::move(parents),
                [xi, wi, bi, stride, pad, kh, kw](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& xv = tp.value_at(xi);
    const Tensor& wv = tp.value_at(wi);
    const int Ci2 = wv.dim(0), Co2 = wv.dim(1);
    const int64_t P2 = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
    Tensor gyc = im2col(gy, kh, kw, stride, pad);  // [Co*kh*kw, Hin*Win]
    CMapM Gc(gyc.data(), Co2 * kh * kw, P2);
    if (tp.needs_at(xi)) {
      Tensor dx(xv.shape());
      CMapM Wm(wv.data(), Ci2, Co2 * kh * kw);
      MapM Dx(dx.data(), Ci2, P2);
      Dx.noalias() = Wm * Gc;
      tp.grad_accum(xi).add_(dx);
    }
    if (tp.needs_at(wi)) {
      Tensor dw(wv.shape());
      CMapM Xm(xv.data(), Ci2, P2);
      MapM Dw(dw.data(), Ci2, Co2 * kh * kw);
      Dw.noalias() = Xm * Gc.transpose();
      tp.grad_accum(wi).add_(dw);
    }
    if (bi >= 0 && tp.needs_at(bi)) {
      Tensor& gb = tp.grad_accum(bi);
      const int64_t Q = static_cast<int64_t>(gy.dim(1)) * gy.dim(2);
      for (int c = 0; c < Co2; ++c) {
        double acc = 0.0;
        const float* d = gy.data() + static_cast<int64_t>(c) * Q;
        for (int64_t i = 0; i < Q; ++i) acc += d[i];
        gb[c] += static_cast<float>(acc);
      }
    }
  });
}

Var instance_norm(Var x, Var gamma, Var beta, float eps) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw std::invalid_argument("instance_norm: expects [C,H,W]");
  const int C = xv.dim(0);
  const int64_t P = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
  const Tensor& gv = t.val(gamma);
  const Tensor& bv = t.val(beta);
  if (gv.numel() != C || bv.numel() != C) throw std::invalid_argument("instance_norm: affine size");

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<float> inv_std(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    const float* d = xv.data() + static_cast<int64_t>(c) * P;
    double mu = 0.0;
    for (int64_t i = 0; i < P; ++i) mu += d[i];
    mu /= static_cast<double>(P);
    double var = 0.0;
    for (int64_t i = 0; i < P; ++i) {
      double dd = d[i] - mu;
      var += dd * dd;
    }
    var /= static_cast<double>(P);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<size_t>(c)] = istd;
    float* xh = xhat.data() + static_cast<int64_t>(c) * P;
    float* o = out.data() + static_cast<int64_t>(c) * P;
    const float g = gv[c], bb = bv[c], m = static_cast<float>(mu);
    for (int64_t i = 0; i < P; ++i) {
      xh[i] = (d[i] - m) * istd;
      o[i] = g * xh[i] + bb;
    }
  }
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return t.make(std::move(out), {xi, gi, bi},
                [xi, gi, bi, C, P, xhat, inv_std](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& gv2 = tp.value_at(gi);
    const bool nx = tp.needs_at(xi), ng = tp.needs_at(gi), nb = tp.needs_at(bi);
    Tensor* gx = nx ? &tp.grad_accum(xi) : nullptr;
    Tensor* gg = ng ? &tp.grad_accum(gi) : nullptr;
    Tensor* gb = nb ? &tp.grad_accum(bi) : nullptr;
    for (int c = 0; c < C; ++c) {
      const float* dy = gy.data() + static_cast<int64_t>(c) * P;
      const float* xh = xhat.data() + static_cast<int64_t>(c) * P;
      if (gg || gb) {
        double sg = 0.0, sb = 0.0;
        for (int64_t i = 0; i < P; ++i) {
          sg += static_cast<double>(dy[i]) * xh[i];
          sb += dy[i];
        }
        if (gg) (*gg)[c] += static_cast<float>(sg);
        if (gb) (*gb)[c] += static_cast<float>(sb);
      }
      if (gx) {
        const float g = gv2[c];
        double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
        for (int64_t i = 0; i < P; ++i) {
          const double dxh = static_cast<double>(dy[i]) * g;
          m1 += dxh;
          m2 += dxh * xh[i];
        }
        m1 /= static_cast<double>(P);
        m2 /= static_cast<double>(P);
        const float istd = inv_std[static_cast<size_t>(c)];
        float* dst = gx->data() + static_cast<int64_t>(c) * P;
        for (int64_t i = 0; i < P; ++i) {
          const double dxh = static_cast<double>(dy[i]) * g;
          dst[i] += static_cast<float>(istd * (dxh - m1 - xh[i] * m2));
        }
      }
    }
  });
}

Tensor maxpool2x2_forward(const Tensor& x) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool2x2: dims must be even");
  Tensor out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int xx = 0; xx < W / 2; ++xx) {
        float m = x.at(c, 2 * y, 2 * xx);
        m = std::max(m, x.at(c, 2 * y, 2 * xx + 1));
        m = std::max(m, x.at(c, 2 * y + 1, 2 * xx));
        m = std::max(m, x.at(c, 2 * y + 1, 2 * xx + 1));
        out.at(c, y, xx) = m;
      }
  return out;
}

Var maxpool2x2(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  Tensor out = maxpool2x2_forward(xv);
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  // Save flat argmax per output cell (first max wins, deterministic).
  std::vector<int32_t> arg(static_cast<size_t>(out.numel()));
  int64_t k = 0;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int xx = 0; xx < W / 2; ++xx, ++k) {
        const int ys[2] = {2 * y, 2 * y + 1}, xs[2] = {2 * xx, 2 * xx + 1};
        float best = -1e30f;
        int32_t bi = 0;
        for (int a = 0; a < 2; ++a)
          for (int bq = 0; bq < 2; ++bq) {
            const int64_t idx = (static_cast<int64_t>(c) * H + ys[a]) * W + xs[bq];
            if (xv[idx] > best) {
              best = xv[idx];
              bi = static_cast<int32_t>(idx);
            }
          }
        arg[static_cast<size_t>(k)] = bi;
      }
  const int xi = x.id;
  return t.make(std::move(out), {xi}, [xi, arg](Tape& tp, int self) {
    if (!tp.needs_at(xi)) return;
    const Tensor& gy = tp.grad_value(self);
    Tensor& g = tp.grad_accum(xi);
    for (int64_t i = 0; i < gy.numel(); ++i) g[arg[static_cast<size_t>(i)]] += gy[i];
  });
}

namespace {

struct LerpW {
  int i0, i1;
  float w0, w1;
};

// Half-pixel-center sampling positions with border clamping.
std::vector<LerpW> lerp_weights(int n_out, int n_in) {
  std::vector<LerpW> ws(static_cast<size_t>(n_out));
  const double scale = static_cast<double>(n_in) / n_out;
  for (int o = 0; o < n_out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    int i0 = static_cast<int>(std::floor(s));
    float f = static_cast<float>(s - i0);
    int i1 = i0 + 1;
    i0 = std::min(std::max(i0, 0), n_in - 1);
    i1 = std::min(std::max(i1, 0), n_in - 1);
    ws[static_cast<size_t>(o)] = {i0, i1, 1.f - f, f};
  }
  return ws;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) throw std::invalid_argument("resize_bilinear: expects [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (out_h == H && out_w == W) return x;
  auto wy = lerp_weights(out_h, H);
  auto wx = lerp_weights(out_w, W);
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      const LerpW& a = wy[static_cast<size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const LerpW& b = wx[static_cast<size_t>(xx)];
        out.at(c, y, xx) = a.w0 * (b.w0 * x.at(c, a.i0, b.i0) + b.w1 * x.at(c, a.i0, b.i1)) +
                           a.w1 * (b.w0 * x.at(c, a.i1, b.i0) + b.w1 * x.at(c, a.i1, b.i1));
      }
    }
  return out;
}

Var resize_bilinear_v(Var x, int out_h, int out_w) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor out = resize_bilinear(xv, out_h, out_w);
  const int xi = x.id;
  return t.make(std::move(out), {xi}, [xi, C, H, W, out_h, out_w](Tape& tp, int self) {
    if (!tp.needs_at(xi)) return;
    const Tensor& gy = tp.grad_value(self);
    Tensor& g = tp.grad_accum(xi);
    if (out_h == H && out_w == W) {
      g.add_(gy);
      return;
    }
    auto wy = lerp_weights(out_h, H);
    auto wx = lerp_weights(out_w, W);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < out_h; ++y) {
        const LerpW& a = wy[static_cast<size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const LerpW& b = wx[static_cast<size_t>(xx)];
          const float v = gy.at(c, y, xx);
          g.at(c, a.i0, b.i0) += a.w0 * b.w0 * v;
          g.at(c, a.i0, b.i1) += a.w0 * b.w1 * v;
          g.at(c, a.i1, b.i0) += a.w1 * b.w0 * v;
          g.at(c, a.i1, b.i1) += a.w1 * b.w1 * v;
        }
      }
  });
}

}  // namespace poseflow
