#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "poseflow/core_data.hpp"

namespace poseflow {

// Procedural stand-in for a dressed-person dataset: an articulated figure of
// six textured quads (torso, head, two arms, two legs) over a smooth
// background, deformed part-by-part with known affines so the dense
// ground-truth flow is exact.

constexpr int kToyParts = 7;    // pose channels: background + 6 body parts
constexpr int kToyClasses = 8;  // background, face, hair, upper, lower,
                                // dress, arms, legs

struct ToyDeformation {
  enum class Kind { Random, Identity, Translation, PerPartRotation };
  Kind kind = Kind::Random;
  // Translation: the backward displacement in pixels. The ground-truth flow
  // is identically (dx, dy) inside the figure: each target pixel samples the
  // source at p + (dx, dy).
  float dx = 0.f, dy = 0.f;
  // Random: per-part rotation angles are drawn from U(-max, +max) degrees.
  float max_angle_deg = 8.f;
  // PerPartRotation: one angle per body part (missing entries are 0) about
  // that part's anchor joint.
  std::vector<float> part_angles_deg;
};

struct ToySample {
  SamplePair pair;
  // Backward flow, target -> source: inverse_warp(I_s, level 0) ~= I_t.
  FlowPyramid gt_flow;
  Tensor figure_mask;  // {1,H,W}: 1 on target pixels covered by the figure
  Tensor part_ids;     // {1,H,W}: body-part index 0..5, -1 on background
  // Source->target affine per body part, row-major [a, b, tx, c, d, ty]:
  // x' = a x + b y + tx, y' = c x + d y + ty.
  std::array<std::array<float, 6>, 6> part_affines{};
};

// Deterministic in (seed, size, deformation); size must be divisible by 64.
// Textures taper into the background toward each quad's edge, so the source
// raster is continuous and bilinear warping by the ground-truth flow
// reproduces the target to interpolation accuracy.
ToySample generate_toy_sample(uint64_t seed, int size,
                              const ToyDeformation& def = {});

}  // namespace poseflow
