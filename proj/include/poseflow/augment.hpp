#pragma once

#include <set>

#include "poseflow/core_data.hpp"
#include "poseflow/tensor.hpp"

namespace poseflow {

enum class ResampleKind { Bilinear, Nearest };

// One concrete augmentation draw. Output keeps the input dims: the crop box
// is resampled to the full frame, then rotation/scale/translation about the
// image center, then a horizontal flip. Sampling clamps at the border.
struct AugTheta {
  float rotation_deg = 0.f;
  float scale = 1.f;
  float translate_x = 0.f;  // pixels
  float translate_y = 0.f;
  bool flip = false;
  float crop_x = 0.f, crop_y = 0.f;    // crop box origin, pixels
  float crop_w = -1.f, crop_h = -1.f;  // box size; < 0 means full frame
};

// Sampling ranges for theta draws. Defaults keep synthetic flows small
// enough for a 64x64 flow network's receptive field.
struct AugRanges {
  float rotation_deg = 15.f;  // rotation ~ U(-r, +r)
  float scale_lo = 0.8f, scale_hi = 1.2f;
  float translate_frac = 0.1f;  // |t| <= frac * dim, per axis
  float flip_p = 0.5f;
  float crop_min_frac = 1.f;  // crop side ~ U(frac, 1) * dim; 1 disables
  void validate() const;
};

AugTheta sample_theta(const AugRanges& r, int height, int width, Rng& rng);

// Resample one CHW raster. Nearest keeps one-hot rasters one-hot (every
// output pixel copies a whole input channel vector).
Tensor apply_aug(const Tensor& raster, const AugTheta& theta, ResampleKind kind);

Image apply_aug(const Image& img, const AugTheta& theta);
PoseMap apply_aug(const PoseMap& pose, const AugTheta& theta);  // parts NN, uv bilinear
GarmentParsing apply_aug(const GarmentParsing& g, const AugTheta& theta);

// Which half of the pair the substitution rewrites: the first stage replaces
// the target with an augmented source; the second stage replaces the source
// with an augmented target.
enum class SubstituteDirection { TargetFromSource, SourceFromTarget };

struct SelfSupConfig {
  float ratio = 0.25f;
  SubstituteDirection direction = SubstituteDirection::TargetFromSource;
  AugRanges ranges;
  // Residue re-derivation after a target substitution.
  std::set<int> residue_background_classes = {0};
  FillStrategy fill = FillStrategy::Diffusion;
};

// Draws eps ~ U(0,1); substitutes with a fresh theta when eps < ratio,
// otherwise returns the pair unchanged. All-or-nothing: the rewritten side's
// image, pose, parsing (and residues, for target rewrites) move together.
SamplePair maybe_substitute(const SamplePair& sample, const SelfSupConfig& cfg,
                            Rng& rng);

}  // namespace poseflow
