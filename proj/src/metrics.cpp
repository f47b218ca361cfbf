#include "poseflow/metrics.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& gauss_kernel() {
  static const std::array<double, kWin> k = [] {
    std::array<double, kWin> g{};
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2.0;
      g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
      sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
  }();
  return k;
}

struct Map2d {
  int h = 0, w = 0;
  std::vector<double> v;
  double& at(int y, int x) { return v[size_t(y) * w + x]; }
  double at(int y, int x) const { return v[size_t(y) * w + x]; }
};

Map2d to_map(const Tensor& t) {
  Map2d m;
  m.h = t.dim(0);
  m.w = t.dim(1);
  m.v.resize(size_t(m.h) * m.w);
  for (int64_t i = 0; i < t.numel(); ++i) m.v[size_t(i)] = t[i];
  return m;
}

// Valid-mode separable Gaussian filter: {h,w} -> {h-10, w-10}.
Map2d gauss_valid(const Map2d& x) {
  const auto& k = gauss_kernel();
  Map2d rows;
  rows.h = x.h;
  rows.w = x.w - (kWin - 1);
  rows.v.resize(size_t(rows.h) * rows.w);
  for (int y = 0; y < rows.h; ++y)
    for (int ox = 0; ox < rows.w; ++ox) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * x.at(y, ox + i);
      rows.at(y, ox) = acc;
    }
  Map2d out;
  out.h = x.h - (kWin - 1);
  out.w = rows.w;
  out.v.resize(size_t(out.h) * out.w);
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * rows.at(oy + i, ox);
      out.at(oy, ox) = acc;
    }
  return out;
}

Map2d ewise(const Map2d& a, const Map2d& b) {
  Map2d out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

Map2d pool2(const Map2d& x) {
  Map2d out;
  out.h = x.h / 2;
  out.w = x.w / 2;
  out.v.resize(size_t(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x2 = 0; x2 < out.w; ++x2)
      out.at(y, x2) = 0.25 * (x.at(2 * y, 2 * x2) + x.at(2 * y, 2 * x2 + 1) +
                              x.at(2 * y + 1, 2 * x2) +
                              x.at(2 * y + 1, 2 * x2 + 1));
  return out;
}

// Mean luminance and contrast-structure terms over valid windows.
struct SsimMeans {
  double l = 0, cs = 0, full = 0;
};

SsimMeans ssim_means(const Map2d& la, const Map2d& lb) {
  Map2d mu_a = gauss_valid(la);
  Map2d mu_b = gauss_valid(lb);
  Map2d aa = gauss_valid(ewise(la, la));
  Map2d bb = gauss_valid(ewise(lb, lb));
  Map2d ab = gauss_valid(ewise(la, lb));
  SsimMeans m;
  const size_t n = mu_a.v.size();
  for (size_t i = 0; i < n; ++i) {
    // The (mean, second moment) pairs are put in a canonical order so that
    // both argument orders evaluate bit-identical expressions: FMA
    // contraction (enabled by -march=native) otherwise rounds one square of
    // ma*ma + mb*mb but not the other, and the choice would follow the
    // argument order, breaking exact symmetry.
    double ma = mu_a.v[i], sa = aa.v[i];
    double mb = mu_b.v[i], sb = bb.v[i];
    if (mb < ma || (mb == ma && sb < sa)) {
      std::swap(ma, mb);
      std::swap(sa, sb);
    }
    const double va = sa - ma * ma;
    const double vb = sb - mb * mb;
    const double cab = ab.v[i] - ma * mb;
    const double l = (2 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
    const double cs = (2 * cab + kC2) / (va + vb + kC2);
    m.l += l;
    m.cs += cs;
    m.full += l * cs;
  }
  m.l /= double(n);
  m.cs /= double(n);
  m.full /= double(n);
  return m;
}

void check_pair(const Image& a, const Image& b, int min_side) {
  if (!a.data.same_shape(b.data))
    throw MetricError("metric: images have different shapes (" +
                      Tensor::shape_str(a.data.shape()) + " vs " +
                      Tensor::shape_str(b.data.shape()) + ")");
  if (a.data.dim(1) < min_side || a.data.dim(2) < min_side)
    throw MetricError("metric: raster " + Tensor::shape_str(a.data.shape()) +
                      " is smaller than the required " +
                      std::to_string(min_side) + " px per side");
}

}  // namespace

Tensor luma01(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw MetricError("luma: expected a {3,H,W} image");
  const int h = rgb.dim(1), w = rgb.dim(2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float r = (rgb.at(0, y, x) + 1.f) * 0.5f;
      const float g = (rgb.at(1, y, x) + 1.f) * 0.5f;
      const float b = (rgb.at(2, y, x) + 1.f) * 0.5f;
      out[int64_t(y) * w + x] = 0.299f * r + 0.587f * g + 0.114f * b;
    }
  return out;
}

double ssim(const Image& a, const Image& b) {
  check_pair(a, b, kWin);
  return ssim_means(to_map(luma01(a.data)), to_map(luma01(b.data))).full;
}

double ms_ssim(const Image& a, const Image& b) {
  static const std::array<double, 5> kWeights{0.0448, 0.2856, 0.3001, 0.2363,
                                              0.1333};
  check_pair(a, b, kWin * 16);
  Map2d la = to_map(luma01(a.data));
  Map2d lb = to_map(luma01(b.data));
  double result = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    SsimMeans m = ssim_means(la, lb);
    const double cs = std::max(m.cs, 0.0);
    const double l = std::max(m.l, 0.0);
    result *= std::pow(cs, kWeights[size_t(scale)]);
    if (scale == 4) result *= std::pow(l, kWeights[4]);
    if (scale < 4) {
      la = pool2(la);
      lb = pool2(lb);
    }
  }
  return result;
}

Tensor mask_from_classes(const GarmentParsing& g,
                         const std::set<int>& classes) {
  const int h = g.classes.dim(1), w = g.classes.dim(2);
  Tensor mask = Tensor::full({1, h, w}, 0.f);
  for (int c : classes) {
    if (c < 0 || c >= g.num_classes())
      throw MetricError("mask: class " + std::to_string(c) +
                        " outside the parsing's " +
                        std::to_string(g.num_classes()) + " channels");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (g.classes.at(c, y, x) > 0.f) mask.at(0, y, x) = 1.f;
  }
  return mask;
}

double masked_metric(const ImageMetric& metric, const Image& a, const Image& b,
                     const Tensor& mask) {
  if (!metric) throw MetricError("masked metric: empty metric functor");
  check_pair(a, b, 1);
  const int h = a.data.dim(1), w = a.data.dim(2);
  const bool flat = mask.rank() == 2;
  if (!(flat && mask.dim(0) == h && mask.dim(1) == w) &&
      !(mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == h &&
        mask.dim(2) == w))
    throw MetricError("masked metric: mask shape " +
                      Tensor::shape_str(mask.shape()) +
                      " does not cover the raster");
  auto mask_at = [&](int y, int x) {
    const float v =
        flat ? mask[int64_t(y) * w + x] : mask.at(0, y, x);
    if (v != 0.f && v != 1.f)
      throw MetricError("masked metric: mask entries must be 0 or 1");
    return v > 0.f;
  };
  bool any = false;
  Tensor ca = a.data, cb = b.data;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask_at(y, x)) {
        any = true;
        continue;
      }
      for (int c = 0; c < 3; ++c) {
        ca.at(c, y, x) = 0.f;  // mid-gray in [-1,1] units
        cb.at(c, y, x) = 0.f;
      }
    }
  if (!any) throw MetricError("masked metric: mask selects no pixels");
  return metric(Image{std::move(ca)}, Image{std::move(cb)});
}

double epe(const Tensor& flow_pred, const Tensor& flow_gt) {
  if (flow_pred.rank() != 3 || flow_pred.dim(0) != 2 ||
      !flow_pred.same_shape(flow_gt))
    throw MetricError("epe: expected two {2,H,W} flows of equal shape");
  const int h = flow_pred.dim(1), w = flow_pred.dim(2);
  double acc = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = double(flow_pred.at(0, y, x)) - flow_gt.at(0, y, x);
      const double dy = double(flow_pred.at(1, y, x)) - flow_gt.at(1, y, x);
      acc += std::sqrt(dx * dx + dy * dy);
    }
  return acc / (double(h) * w);
}

}  // namespace poseflow
