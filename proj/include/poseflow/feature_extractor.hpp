#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poseflow/autograd.hpp"

namespace poseflow {

enum class FeatureBackend { RandomStack, Vgg16 };
enum class StageActivation { Tanh, Relu };

// One conv stage of a feature extractor. `pool_before` inserts a 2x2 max
// pool ahead of the conv (block boundaries); `tap` exports this stage's
// activation as a feature level.
struct FeatureStage {
  std::string name;
  Tensor w;  // [Co,Ci,kh,kw]
  Tensor b;  // [Co]
  int stride = 1;
  int pad = 1;
  bool pool_before = false;
  bool tap = false;
};

// Frozen convolutional feature pyramid used by the texture and perceptual
// losses. Weights enter any tape as constants: gradients reach the input
// image only, never the extractor.
class FeatureExtractor {
 public:
  FeatureExtractor(std::vector<FeatureStage> stages, StageActivation act,
                   FeatureBackend backend);

  // Default backend: 5 stride-2 conv stages (widths 16/32/64/64/64), tanh
  // activations, weights drawn once from a fixed seed. Tanh keeps the map
  // smooth, so finite-difference checks of losses built on top are reliable.
  static FeatureExtractor make_random(uint64_t seed = 0x5eedf00dULL);

  // VGG16 blocks 1-4 with taps after conv1_2, conv2_2, conv3_2, conv4_2,
  // conv4_3 (relu). Seeded random weights; replace via load_weights() when
  // pretrained weights are available.
  static FeatureExtractor make_vgg16(uint64_t seed = 0x5eedf00dULL);

  // Replace stage tensors by name ("conv1_1.w", "conv1_1.b", ...). Throws
  // CheckpointError on unknown names or shape mismatches.
  void load_weights(const std::map<std::string, Tensor>& named);

  int num_taps() const { return num_taps_; }
  FeatureBackend backend() const { return backend_; }
  const char* backend_name() const;

  // Tap activations L0..L(num_taps-1), shallow to deep. Input: [3,H,W].
  std::vector<Var> features(Var image) const;
  std::vector<Tensor> features(const Tensor& image) const;

  const std::vector<FeatureStage>& stages() const { return stages_; }

 private:
  std::vector<FeatureStage> stages_;
  StageActivation act_;
  FeatureBackend backend_;
  int num_taps_ = 0;
};

}  // namespace poseflow
