#include "poseflow/warp.hpp"

#include <cmath>

#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

void check_warp_shapes(const Tensor& src, const Tensor& flow) {
  if (src.rank() != 3 || flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != src.dim(1) ||
      flow.dim(2) != src.dim(2))
    throw ValidationError("inverse_warp: src [C,H,W] and flow [2,H,W] must share H,W");
  if (!src.all_finite() || !flow.all_finite())
    throw ValidationError("inverse_warp: non-finite input");
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct Corners {
  int x0, x1, y0, y1;     // clamped indices
  float fx, fy;           // fractional weights
  bool in_x0, in_x1, in_y0, in_y1;  // in-range flags (zeros mode)
};

inline Corners corners_at(float xs, float ys, int W, int H) {
  Corners c;
  const float fx0 = std::floor(xs), fy0 = std::floor(ys);
  c.fx = xs - fx0;
  c.fy = ys - fy0;
  const int ix0 = static_cast<int>(fx0), iy0 = static_cast<int>(fy0);
  c.in_x0 = ix0 >= 0 && ix0 < W;
  c.in_x1 = ix0 + 1 >= 0 && ix0 + 1 < W;
  c.in_y0 = iy0 >= 0 && iy0 < H;
  c.in_y1 = iy0 + 1 >= 0 && iy0 + 1 < H;
  c.x0 = clampi(ix0, 0, W - 1);
  c.x1 = clampi(ix0 + 1, 0, W - 1);
  c.y0 = clampi(iy0, 0, H - 1);
  c.y1 = clampi(iy0 + 1, 0, H - 1);
  return c;
}

}  // namespace

Tensor inverse_warp(const Tensor& src, const Tensor& flow, WarpPadding padding) {
  check_warp_shapes(src, flow);
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  const bool zeros = padding == WarpPadding::Zeros;
  Tensor out({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float xs = x + flow.at(0, y, x);
      const float ys = y + flow.at(1, y, x);
      const Corners cr = corners_at(xs, ys, W, H);
      for (int c = 0; c < C; ++c) {
        float v00 = src.at(c, cr.y0, cr.x0);
        float v01 = src.at(c, cr.y0, cr.x1);
        float v10 = src.at(c, cr.y1, cr.x0);
        float v11 = src.at(c, cr.y1, cr.x1);
        if (zeros) {
          if (!(cr.in_y0 && cr.in_x0)) v00 = 0.f;
          if (!(cr.in_y0 && cr.in_x1)) v01 = 0.f;
          if (!(cr.in_y1 && cr.in_x0)) v10 = 0.f;
          if (!(cr.in_y1 && cr.in_x1)) v11 = 0.f;
        }
        out.at(c, y, x) = (1.f - cr.fy) * ((1.f - cr.fx) * v00 + cr.fx * v01) +
                          cr.fy * ((1.f - cr.fx) * v10 + cr.fx * v11);
      }
    }
  return out;
}

Var inverse_warp_v(Var src, Var flow, WarpPadding padding) {
  Tape& t = *src.tape;
  Tensor out = inverse_warp(t.val(src), t.val(flow), padding);
  const int si = src.id, fi = flow.id;
  return t.make(std::move(out), {si, fi}, [si, fi, padding](Tape& tp, int self) {
    const Tensor& gy = tp.grad_value(self);
    const Tensor& sv = tp.value_at(si);
    const Tensor& fv = tp.value_at(fi);
    const int C = sv.dim(0), H = sv.dim(1), W = sv.dim(2);
    const bool zeros = padding == WarpPadding::Zeros;
    const bool ns = tp.needs_at(si), nf = tp.needs_at(fi);
    Tensor* gs = ns ? &tp.grad_accum(si) : nullptr;
    Tensor* gf = nf ? &tp.grad_accum(fi) : nullptr;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float xs = x + fv.at(0, y, x);
        const float ys = y + fv.at(1, y, x);
        const Corners cr = corners_at(xs, ys, W, H);
        float du = 0.f, dv = 0.f;
        for (int c = 0; c < C; ++c) {
          const float g = gy.at(c, y, x);
          if (g == 0.f && !nf) continue;
          float v00 = sv.at(c, cr.y0, cr.x0);
          float v01 = sv.at(c, cr.y0, cr.x1);
          float v10 = sv.at(c, cr.y1, cr.x0);
          float v11 = sv.at(c, cr.y1, cr.x1);
          bool k00 = true, k01 = true, k10 = true, k11 = true;
          if (zeros) {
            k00 = cr.in_y0 && cr.in_x0;
            k01 = cr.in_y0 && cr.in_x1;
            k10 = cr.in_y1 && cr.in_x0;
            k11 = cr.in_y1 && cr.in_x1;
            if (!k00) v00 = 0.f;
            if (!k01) v01 = 0.f;
            if (!k10) v10 = 0.f;
            if (!k11) v11 = 0.f;
          }
          if (gs) {
            if (k00) gs->at(c, cr.y0, cr.x0) += g * (1.f - cr.fy) * (1.f - cr.fx);
            if (k01) gs->at(c, cr.y0, cr.x1) += g * (1.f - cr.fy) * cr.fx;
            if (k10) gs->at(c, cr.y1, cr.x0) += g * cr.fy * (1.f - cr.fx);
            if (k11) gs->at(c, cr.y1, cr.x1) += g * cr.fy * cr.fx;
          }
          if (gf) {
            du += g * ((1.f - cr.fy) * (v01 - v00) + cr.fy * (v11 - v10));
            dv += g * ((1.f - cr.fx) * (v10 - v00) + cr.fx * (v11 - v01));
          }
        }
        if (gf) {
          gf->at(0, y, x) += du;
          gf->at(1, y, x) += dv;
        }
      }
  });
}

Tensor resize_flow(const Tensor& flow, int out_h, int out_w) {
  if (flow.rank() != 3 || flow.dim(0) != 2)
    throw ValidationError("resize_flow: expects [2,H,W]");
  if (out_h <= 0 || out_w <= 0) throw ValidationError("resize_flow: nonpositive target dims");
  if (out_h == flow.dim(1) && out_w == flow.dim(2)) return flow;
  Tensor r = resize_bilinear(flow, out_h, out_w);
  const float sx = static_cast<float>(out_w) / flow.dim(2);
  const float sy = static_cast<float>(out_h) / flow.dim(1);
  const int64_t P = static_cast<int64_t>(out_h) * out_w;
  for (int64_t i = 0; i < P; ++i) r[i] *= sx;
  for (int64_t i = P; i < 2 * P; ++i) r[i] *= sy;
  return r;
}

Var resize_flow_v(Var flow, int out_h, int out_w) {
  Tape& t = *flow.tape;
  const Tensor& fv = t.val(flow);
  if (fv.rank() != 3 || fv.dim(0) != 2) throw ValidationError("resize_flow: expects [2,H,W]");
  if (out_h == fv.dim(1) && out_w == fv.dim(2)) return flow;
  Var r = resize_bilinear_v(flow, out_h, out_w);
  const float sx = static_cast<float>(out_w) / fv.dim(2);
  const float sy = static_cast<float>(out_h) / fv.dim(1);
  return scale_channels(r, {sx, sy});
}

namespace {

// Double-precision projection loss used as the FD reference, so the check
// measures analytic-backward accuracy rather than float forward noise.
double warp_proj_loss_d(const std::vector<double>& s, const std::vector<double>& f,
                        const Tensor& proj, int C, int H, int W, bool zeros) {
  double acc = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double xs = x + f[static_cast<size_t>(y) * W + x];
      const double ys = y + f[static_cast<size_t>(H) * W + static_cast<size_t>(y) * W + x];
      const double fx0 = std::floor(xs), fy0 = std::floor(ys);
      const double fx = xs - fx0, fy = ys - fy0;
      const int ix0 = static_cast<int>(fx0), iy0 = static_cast<int>(fy0);
      const int x0 = clampi(ix0, 0, W - 1), x1 = clampi(ix0 + 1, 0, W - 1);
      const int y0 = clampi(iy0, 0, H - 1), y1 = clampi(iy0 + 1, 0, H - 1);
      const bool inx0 = ix0 >= 0 && ix0 < W, inx1 = ix0 + 1 >= 0 && ix0 + 1 < W;
      const bool iny0 = iy0 >= 0 && iy0 < H, iny1 = iy0 + 1 >= 0 && iy0 + 1 < H;
      for (int c = 0; c < C; ++c) {
        const size_t base = static_cast<size_t>(c) * H * W;
        double v00 = s[base + static_cast<size_t>(y0) * W + x0];
        double v01 = s[base + static_cast<size_t>(y0) * W + x1];
        double v10 = s[base + static_cast<size_t>(y1) * W + x0];
        double v11 = s[base + static_cast<size_t>(y1) * W + x1];
        if (zeros) {
          if (!(iny0 && inx0)) v00 = 0.0;
          if (!(iny0 && inx1)) v01 = 0.0;
          if (!(iny1 && inx0)) v10 = 0.0;
          if (!(iny1 && inx1)) v11 = 0.0;
        }
        const double o = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                         fy * ((1.0 - fx) * v10 + fx * v11);
        acc += static_cast<double>(proj.at(c, y, x)) * o;
      }
    }
  return acc;
}

}  // namespace

double grad_check_warp(const Tensor& src, const Tensor& flow, double eps, WarpPadding padding) {
  Rng rng(20240816u);
  Tensor proj(src.shape());
  for (int64_t i = 0; i < proj.numel(); ++i) proj[i] = rng.uniform(-1.f, 1.f);

  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  const bool zeros = padding == WarpPadding::Zeros;
  std::vector<double> sd(static_cast<size_t>(src.numel()));
  std::vector<double> fd_(static_cast<size_t>(flow.numel()));
  for (int64_t i = 0; i < src.numel(); ++i) sd[static_cast<size_t>(i)] = src[i];
  for (int64_t i = 0; i < flow.numel(); ++i) fd_[static_cast<size_t>(i)] = flow[i];
  auto loss_of = [&]() { return warp_proj_loss_d(sd, fd_, proj, C, H, W, zeros); };

  Tape tape;
  Var sv = tape.leaf(src);
  Var fv = tape.leaf(flow);
  Var out = inverse_warp_v(sv, fv, padding);
  // Same projection as loss_of so analytic and FD agree on the objective.
  Var loss = sum_all(mul(out, tape.constant(proj)));
  tape.backward(loss);
  const Tensor* gs = tape.grad_of(sv);
  const Tensor* gf = tape.grad_of(fv);

  double max_err = 0.0;
  auto check = [&](std::vector<double>& vals, const Tensor* analytic) {
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + eps;
      const double lp = loss_of();
      vals[i] = keep - eps;
      const double lm = loss_of();
      vals[i] = keep;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = analytic ? static_cast<double>((*analytic)[static_cast<int64_t>(i)]) : 0.0;
      const double err = std::fabs(an - fd) / (std::fabs(an) + 1e-8);
      max_err = std::max(max_err, err);
    }
  };
  check(sd, gs);
  check(fd_, gf);
  return max_err;
}

}  // namespace poseflow
