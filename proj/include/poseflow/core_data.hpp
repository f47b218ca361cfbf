#pragma once

#include <set>
#include <string>
#include <vector>

#include "poseflow/tensor.hpp"

namespace poseflow {

// Photographic raster, 3 channels CHW, values in [-1,1], dims divisible by 64
// (six stride-2 stages). Fields are public for test construction; make()
// validates.
struct Image {
  Tensor data;  // {3,H,W}
  static Image make(Tensor t);
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

// One-hot body-part parsing plus UV coordinate channels.
struct PoseMap {
  Tensor parts;  // {Np,H,W}, one-hot per pixel
  Tensor uv;     // {2,H,W}, values in [0,1]
  static PoseMap make(Tensor parts, Tensor uv);
  int num_parts() const { return parts.dim(0); }
};

// One-hot garment-class parsing.
struct GarmentParsing {
  Tensor classes;  // {Ng,H,W}
  static GarmentParsing make(Tensor t);
  int num_classes() const { return classes.dim(0); }
};

struct Residues {
  Image image_residue;
  Tensor garment_residue;  // {Ng,H,W}, per-pixel channel sums 0 or 1
};

// Six flow fields; level l at (H/2^l, W/2^l), displacements in pixels at that
// level's own resolution, channel 0 = dx, channel 1 = dy.
struct FlowPyramid {
  std::vector<Tensor> levels;
  static FlowPyramid make(std::vector<Tensor> levels);
  static constexpr int kLevels = 6;
};

struct SamplePair {
  Image source_image;
  PoseMap source_pose;
  GarmentParsing source_garment;
  Image target_image;
  PoseMap target_pose;
  GarmentParsing target_garment;
  Residues target_residues;
};

struct ValidationReport {
  bool ok = true;
  std::string violation;
};

enum class FillStrategy { Diffusion, Mean };

// Zero the listed class channels of a one-hot parsing.
Tensor make_garment_residue(const Tensor& classes, const std::set<int>& excluded_classes);

// Keep pixels whose argmax class is in keep_classes; fill the removed region.
// Diffusion fill solves the Laplace equation over the removed region with the
// kept pixels as boundary (Jacobi iteration); Mean fill uses the kept-region
// per-channel mean (0 when the kept region is empty).
Tensor make_image_residue(const Tensor& img, const Tensor& classes,
                          const std::set<int>& keep_classes,
                          FillStrategy fill = FillStrategy::Diffusion);

Residues make_residues(const Image& img, const GarmentParsing& g,
                       const std::set<int>& kept_background_classes,
                       FillStrategy fill = FillStrategy::Diffusion);

ValidationReport validate_pair(const SamplePair& p);

// Binary figure mask {1,H,W}: pixels whose garment argmax class is NOT in
// excluded (typically background only, or background/face/hair).
Tensor garment_mask(const Tensor& classes, const std::set<int>& excluded_classes);

}  // namespace poseflow
