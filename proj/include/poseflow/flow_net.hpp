#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poseflow/autograd.hpp"
#include "poseflow/core_data.hpp"

namespace poseflow {

// Pose-conditioned flow network: a FlowNetS-shaped encoder/decoder at width
// 64 whose final x4 upsampling is replaced by two x2 U-Net upsampling
// modules, so flows are predicted at all six pyramid levels. Heads start at
// zero: the initial prediction is the identity warp.
struct FlowNetParams {
  int in_channels = 0;  // 3 + (Np+2) + (Np+2)
  int width = 64;
  ConvParam conv1, conv2, conv3, conv4, conv5, conv6;      // stride-2 encoder
  ConvParam deconv5, deconv4, deconv3, deconv2;            // refinement
  ConvParam up1, up0;                                      // x2 U-Net modules
  ConvParam head5, head4, head3, head2, head1, head0;      // 2-channel flows

  // Stable name -> parameter listing for optimizers and checkpoints.
  std::vector<std::pair<std::string, Param*>> named();
  void validate() const;
  void zero_grad();
};

// Kaiming fan-in init for feature layers, zeros for every flow head.
FlowNetParams init_flow_params(int num_parts, uint64_t seed, int width = 64);

// [I_s; P_s.parts; P_s.uv; P_t.parts; P_t.uv] as one channel stack.
Tensor flow_input(const Image& i_s, const PoseMap& p_s, const PoseMap& p_t);

// Differentiable forward pass: six flow Vars, level 0 first (full
// resolution). Parameters are enrolled on the tape, so backward() accumulates
// into their grads.
std::vector<Var> flow_forward_vars(Tape& tape, FlowNetParams& params,
                                   const Tensor& input);

// Inference wrapper producing a validated pyramid.
FlowPyramid flow_forward(FlowNetParams& params, const Image& i_s,
                         const PoseMap& p_s, const PoseMap& p_t);

}  // namespace poseflow
