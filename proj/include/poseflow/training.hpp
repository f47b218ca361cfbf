#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "poseflow/augment.hpp"
#include "poseflow/autograd.hpp"
#include "poseflow/core_data.hpp"
#include "poseflow/feature_extractor.hpp"
#include "poseflow/flow_net.hpp"
#include "poseflow/losses.hpp"
#include "poseflow/synthesis.hpp"

namespace poseflow {

struct TrainConfig {
  float lr_gen = 1e-4f;
  float lr_disc = 4e-4f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  int epochs_flow = 20;
  int epochs_garment = 20;
  int epochs_synthesis = 40;
  int batch_size = 8;  // toy runs use 2
  uint64_t seed = 1;
  // generator objective weights: l1, feature, texture, adversarial
  std::array<float, 4> lambda{1.f, 0.1f, 0.002f, 0.5f};
  int flow_width = 64;
  int synth_width = 64;
  int disc_width = 64;
  bool disc_use_pose = false;    // ablation: condition D on the target pose
  bool teacher_forcing = false;  // feed ground-truth garment to SynthesisNet
  SelfSupConfig selfsup;         // direction is forced per stage
  StageOneWeights stage1;
  CharbonnierParams charbonnier;
  void validate() const;
};

// Per-step scalar log: one row per (step, term).
struct LogRow {
  int step;
  std::string term;
  double value;
};
using LossHistory = std::vector<LogRow>;
void write_loss_csv(const LossHistory& history, const std::string& path);

// Called after each epoch; epoch is 0-based.
using EpochHook = std::function<void(int epoch, const LossHistory& history)>;

// ---- Adam ----
struct AdamState {
  int64_t t = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments;  // m, v
};
void adam_step(const std::vector<std::pair<std::string, Param*>>& params,
               AdamState& state, float lr, float beta1, float beta2,
               float eps = 1e-8f);

// ---- spectral normalization ----
// Power iteration on the weight unrolled to [dim0, numel/dim0]; u and v are
// persistent buffers updated in place.
void spectral_power_iterate(const Tensor& w, Tensor& u, Tensor& v, int iters);
float spectral_sigma_estimate(const Tensor& w, const Tensor& u,
                              const Tensor& v);
// Standalone estimate: fresh seeded buffers, `power_iters` iterations.
Tensor spectral_normalize(const Tensor& w, int power_iters, uint64_t seed = 1);
// w / (u^T W v) on the tape; u, v enter as constants, so gradients flow
// through W only (both directly and through the sigma estimate).
Var spectral_scale(Tape& tape, Var w, const Tensor& u, const Tensor& v);

// ---- PatchGAN discriminator with spectral normalization ----
struct SnConv {
  ConvParam conv;
  Tensor u, v;  // power-iteration state for conv.w
};
struct DiscriminatorParams {
  int in_channels = 3;
  int width = 64;  // stage widths w, 2w, 4w, 8w
  std::array<SnConv, 4> convs;
  SnConv head;  // 1x1 logits head
  std::vector<std::pair<std::string, Param*>> named();
  void validate() const;
  void zero_grad();
};
DiscriminatorParams init_disc_params(int in_channels, uint64_t seed,
                                     int width = 64);
// Logits map. update_power refreshes u/v before use (training steps only);
// freeze enrolls weights as constants so no gradient reaches D.
Var disc_forward_vars(Tape& tape, DiscriminatorParams& params, Var input,
                      bool update_power, bool freeze);
// Re-sync the power-iteration state after an optimizer step; without this the
// sigma estimate lags the moved weights and the <= 1 + 1e-2 bound drifts.
// `iters` caps the iteration count; it stops early once the estimate settles.
void disc_refresh_power(DiscriminatorParams& params, int iters = 500);
// Largest singular value among the spectrally-normalized weights, measured
// with a fresh long power iteration (invariant: <= 1 + 1e-2).
float disc_max_normalized_sigma(const DiscriminatorParams& params);

// ---- stage training loops ----
// All loops mutate the passed-in parameter structs (callers initialize them)
// and return the scalar log. A non-finite loss aborts with TrainError naming
// the step and the batch sample indices.
LossHistory train_flow(const std::vector<SamplePair>& dataset,
                       FlowNetParams& params, const FeatureExtractor& fx,
                       const TrainConfig& cfg, const EpochHook& hook = {});

// Flow params are used for pyramid inference only and are never updated.
LossHistory train_garment(const std::vector<SamplePair>& dataset,
                          FlowNetParams& flow, SynthParams& params,
                          const TrainConfig& cfg, const EpochHook& hook = {});

LossHistory train_synthesis(const std::vector<SamplePair>& dataset,
                            FlowNetParams& flow, SynthParams& garment,
                            SynthParams& params, DiscriminatorParams& disc,
                            const FeatureExtractor& fx, const TrainConfig& cfg,
                            const EpochHook& hook = {});

}  // namespace poseflow
