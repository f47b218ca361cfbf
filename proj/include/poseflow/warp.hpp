#pragma once

#include "poseflow/autograd.hpp"
#include "poseflow/tensor.hpp"

namespace poseflow {

enum class WarpPadding { Border, Zeros };

struct WarpConfig {
  WarpPadding padding = WarpPadding::Border;
};

// out[c,y,x] = bilinear_sample(src, x + flow[0,y,x], y + flow[1,y,x]).
// src: [C,H,W], flow: [2,H,W] in pixels at this resolution.
Tensor inverse_warp(const Tensor& src, const Tensor& flow,
                    WarpPadding padding = WarpPadding::Border);
Var inverse_warp_v(Var src, Var flow, WarpPadding padding = WarpPadding::Border);

// Bilinear resize of a flow field with displacement rescaling (W'/W, H'/H).
Tensor resize_flow(const Tensor& flow, int out_h, int out_w);
Var resize_flow_v(Var flow, int out_h, int out_w);

// Max relative error between analytic warp gradients (src and flow) and
// central finite differences under a fixed random projection loss.
double grad_check_warp(const Tensor& src, const Tensor& flow, double eps,
                       WarpPadding padding = WarpPadding::Border);

}  // namespace poseflow
