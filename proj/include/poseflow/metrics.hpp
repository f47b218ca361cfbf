#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "poseflow/core_data.hpp"
#include "poseflow/tensor.hpp"

namespace poseflow {

// [0,1] Rec.601 luma (0.299 R + 0.587 G + 0.114 B) from a [-1,1] RGB image.
Tensor luma01(const Tensor& rgb);

// Standard single-scale SSIM on the [0,1] luma: 11x11 Gaussian window with
// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, mean over valid windows
// (no padding). Throws MetricError when either side of the raster is smaller
// than the window.
double ssim(const Image& a, const Image& b);

// Product-form multi-scale SSIM: five scales, weights (0.0448, 0.2856,
// 0.3001, 0.2363, 0.1333), 2x2 mean-pool between scales. The
// contrast-structure term enters at every scale and the luminance term at
// the coarsest only; negative per-scale means clamp to zero. Requires the
// coarsest scale to still hold an 11x11 window (dims >= 16 * 11).
double ms_ssim(const Image& a, const Image& b);

using ImageMetric = std::function<double(const Image&, const Image&)>;

// Union of the listed class channels of a parsing, as a {1,H,W} 0/1 mask.
Tensor mask_from_classes(const GarmentParsing& g, const std::set<int>& classes);

// Composite both images onto mid-gray (0 in [-1,1] units) outside the mask,
// then apply the metric. The result therefore depends only on in-mask
// pixels. mask: {1,H,W} or {H,W}, entries 0 or 1; an all-zero mask throws
// MetricError.
double masked_metric(const ImageMetric& metric, const Image& a, const Image& b,
                     const Tensor& mask);

// Mean Euclidean endpoint error between two {2,H,W} flow fields, in pixels.
double epe(const Tensor& flow_pred, const Tensor& flow_gt);

// Adapter interfaces for scorers that need external pretrained weights.
// Implementations plug into `eval` style tooling; none ship with the core
// library, keeping the default suite offline-runnable.
struct BatchScorer {
  virtual ~BatchScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::vector<Image>& batch) = 0;
};
struct PairScorer {
  virtual ~PairScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const Image& a, const Image& b) = 0;
};

}  // namespace poseflow
