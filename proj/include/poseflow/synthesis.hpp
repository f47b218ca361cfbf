#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poseflow/autograd.hpp"
#include "poseflow/core_data.hpp"

namespace poseflow {

// Instance-norm affine parameters.
struct NormParam {
  Param gamma;
  Param beta;
};

// One encoder/decoder stage: a (de)convolution plus optional normalization.
struct SynthStage {
  ConvParam conv;
  NormParam norm;
};

// Two 3x3 convs with an identity skip, width Cs.
struct SynthResBlock {
  ConvParam conv1, conv2;
  NormParam norm1, norm2;
};

struct SynthConfig {
  int src_channels = 0;  // GarmentNet: Ng+Np+2; SynthesisNet: 3+Np+2
  int tgt_channels = 0;  // GarmentNet: Np+2;    SynthesisNet: Ng+Np+2
  int out_channels = 0;  // GarmentNet: Ng;      SynthesisNet: 3
  int width = 64;        // Cs (toy configs use 16)
  bool use_norm = true;  // instance normalization in encoders/decoder
  void validate() const;
};

SynthConfig garment_net_config(int num_garment_classes, int num_parts,
                               int width = 64);
SynthConfig synthesis_net_config(int num_garment_classes, int num_parts,
                                 int width = 64);

// Shared GarmentNet/SynthesisNet parameter set: a source encoder (six
// stride-2 convs plus seven residue blocks at the coarsest level), a target
// encoder (six stride-2 convs), one 1x1 attention matrix per level, six
// decoder deconv stages, and the two output heads.
struct SynthParams {
  SynthConfig cfg;
  std::array<SynthStage, 6> src_enc;
  std::array<SynthResBlock, 7> res;
  std::array<SynthStage, 6> tgt_enc;
  std::array<Param, 6> att_w;  // [Cs,Cs,1,1] conv weights, no bias
  std::array<SynthStage, 6> dec;  // coarse-to-fine
  ConvParam head_fg, head_mask;

  std::vector<std::pair<std::string, Param*>> named();
  void validate() const;
  void zero_grad();
};

SynthParams init_synth_params(const SynthConfig& cfg, uint64_t seed);

// Six feature maps, level l at spatial dims (H/2^(l+1), W/2^(l+1)).
std::vector<Var> encode_source(Tape& tape, SynthParams& params, Var in_s);
std::vector<Var> encode_target(Tape& tape, SynthParams& params, Var in_t);

// Per-pixel scalar gate g = sigmoid(sum_c conv1x1_W(f_warp) * f_t); the
// filtered map is f_warp * g broadcast over channels.
struct GatedAttention {
  Var filtered;
  Var gate;  // {1,h,w}, every value in (0,1)
};
GatedAttention gated_attention(Var f_warp, Var f_t, Var w);

// U-Net fusion decoder, coarse to fine: six deconv stages consuming the
// filtered source features and the target features at each level; output is
// a full-resolution feature map.
Var decode(Tape& tape, SynthParams& params, const std::vector<Var>& filtered,
           const std::vector<Var>& target_feats);

struct SynthOutputVars {
  Var out;   // mask*fg + (1-mask)*residue, pre-activation
  Var fg;
  Var mask;  // {1,H,W} in (0,1)
  std::vector<Var> gates;
};
SynthOutputVars heads_and_blend(Tape& tape, SynthParams& params, Var f_dec,
                                Var residue);

// Tensor-level diagnostics mirror of SynthOutputVars.
struct SynthOutput {
  Tensor out;
  Tensor fg;
  Tensor mask;
  std::vector<Tensor> attention_gates;
};

// Shared pipeline: encode both streams, warp source features per level with
// the (frozen) flow pyramid, filter with gated attention, decode, and blend
// with the residue. Returns the pre-activation blend plus diagnostics.
SynthOutputVars synth_forward_vars(Tape& tape, SynthParams& params,
                                   const Tensor& in_s, const Tensor& in_t,
                                   const FlowPyramid& flows,
                                   const Tensor& residue);

// GarmentNet: per-pixel softmax over the blended logits; rows sum to one.
Var garment_forward_vars(Tape& tape, SynthParams& params,
                         const GarmentParsing& g_s, const PoseMap& p_s,
                         const PoseMap& p_t, const FlowPyramid& flows,
                         const Tensor& garment_residue,
                         SynthOutputVars* diag = nullptr);
Tensor garmentnet_forward(SynthParams& params, const GarmentParsing& g_s,
                          const PoseMap& p_s, const PoseMap& p_t,
                          const FlowPyramid& flows,
                          const Tensor& garment_residue,
                          SynthOutput* diag = nullptr);

// SynthesisNet: tanh over the blended output; values in [-1,1]. The target
// garment enters as a per-pixel distribution (soft or one-hot).
Var synthesis_forward_vars(Tape& tape, SynthParams& params, const Image& i_s,
                           const PoseMap& p_s, const Tensor& g_t,
                           const PoseMap& p_t, const FlowPyramid& flows,
                           const Image& image_residue,
                           SynthOutputVars* diag = nullptr);
Image synthesisnet_forward(SynthParams& params, const Image& i_s,
                           const PoseMap& p_s, const Tensor& g_t,
                           const PoseMap& p_t, const FlowPyramid& flows,
                           const Image& image_residue,
                           SynthOutput* diag = nullptr);

}  // namespace poseflow
