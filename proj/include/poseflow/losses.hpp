#pragma once

#include <array>
#include <vector>

#include "poseflow/autograd.hpp"
#include "poseflow/feature_extractor.hpp"

namespace poseflow {

struct CharbonnierParams {
  float eps = 1e-3f;
  float alpha = 0.45f;
  void validate() const;  // eps > 0, 0 < alpha <= 1
};

// Per-level weights of the combined first-stage objective:
// sum_l s[l] * (photometric_l + beta[l]*texture_l + gamma[l]*tv_l).
struct StageOneWeights {
  std::array<float, 6> s{1.f, 1.f, 0.5f, 0.25f, 0.125f, 0.f};
  std::array<float, 6> beta{0.002f, 0.002f, 0.002f, 0.002f, 0.f, 0.f};
  std::array<float, 6> gamma{0.1f, 0.1f, 0.1f, 0.1f, 0.f, 0.f};
  void validate() const;  // all entries >= 0
};

// mean rho(target - warped_src), rho(d) = (d^2 + eps^2)^alpha.
Var photometric_loss(Var target, Var warped_src, const CharbonnierParams& cp);
// Per channel and direction, mean |forward difference|, summed.
Var tv_loss(Var flow);
// [C,C] second-order feature statistic, normalized by H*W.
Var gram(Var features);
// Per tap l: mean |gram(f_l(target)) - gram(f_l(warped_src))|.
std::vector<Var> texture_loss(Var target, Var warped_src,
                              const FeatureExtractor& fx);
// mean |f_L3(a) - f_L3(b)| (the perceptual tap used by the synthesis stage).
Var vgg_feature_loss(Var a, Var b, const FeatureExtractor& fx);

struct LsganPair {
  Var disc;  // mean((d_real-1)^2) + mean(d_fake^2)
  Var gen;   // mean((d_fake-1)^2)
};
LsganPair lsgan_losses(Var d_real, Var d_fake);

// Combined first-stage objective over a 6-level flow pyramid. `flows` live on
// one tape, level 0 full resolution; i_s / i_t enter as constants, so
// gradients reach the flows only. Per-term values are unweighted; terms whose
// effective weight is zero are skipped and reported as 0.
struct StageOneBreakdown {
  Var total;
  std::array<float, 6> photometric{};
  std::array<float, 6> texture{};  // per tap; entry 5 unused (weight is 0)
  std::array<float, 6> tv{};
  float total_value = 0.f;
};
StageOneBreakdown stage1_loss(const Tensor& i_s, const Tensor& i_t,
                              const std::vector<Var>& flows,
                              const StageOneWeights& w,
                              const CharbonnierParams& cp,
                              const FeatureExtractor& fx);

// Tensor-level conveniences (internal throwaway tape; forward value only).
double photometric_loss(const Tensor& target, const Tensor& warped_src,
                        const CharbonnierParams& cp);
double tv_loss(const Tensor& flow);
Tensor gram(const Tensor& features);
std::vector<double> texture_loss(const Tensor& target,
                                 const Tensor& warped_src,
                                 const FeatureExtractor& fx);

}  // namespace poseflow
