#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "poseflow/autograd.hpp"
#include "poseflow/core_data.hpp"
#include "poseflow/tensor.hpp"

namespace poseflow {

// ---- PNG conventions -------------------------------------------------------
// Images: 8-bit RGB, values mapped linearly between [-1,1] and [0,255].
// Class rasters (pose parts, garment parsing): single-channel 8-bit PNG of
// class indices; loaders expand to one-hot.
// UV rasters: 16-bit gray+alpha PNG, both channels quantized from [0,1].
// All loaders throw DataError on missing files, bad signatures, or rasters
// that violate the declared conventions.

void write_image_png(const std::string& path, const Image& img);
Image read_image_png(const std::string& path);

// onehot: {C,H,W}; the written pixel is the per-pixel argmax channel.
void write_class_png(const std::string& path, const Tensor& onehot);
// Expands indices back to one-hot; an index >= num_classes is a DataError.
Tensor read_class_png(const std::string& path, int num_classes);

// uv: {2,H,W} in [0,1]; stored as 16-bit gray (u) + alpha (v).
void write_uv_png(const std::string& path, const Tensor& uv);
Tensor read_uv_png(const std::string& path);

// Diagnostic dump: {1,H,W} or {H,W} map with values in [0,1] to 8-bit gray.
void write_gray_png(const std::string& path, const Tensor& map01);

// ---- Sample directories ----------------------------------------------------
// One sample = one directory holding image.png, pose_parts.png, pose_uv.png,
// and garment.png under the conventions above.

struct SampleFiles {
  Image image;
  PoseMap pose;
  GarmentParsing garment;
};

void save_sample_dir(const std::string& dir, const Image& img,
                     const PoseMap& pose, const GarmentParsing& garment);
SampleFiles load_sample_dir(const std::string& dir, int num_parts,
                            int num_classes);

// Assembles a full training pair from two sample directories; target residues
// are derived on load.
SamplePair load_sample_pair(const std::string& source_dir,
                            const std::string& target_dir, int num_parts,
                            int num_classes,
                            const std::set<int>& residue_background_classes = {0},
                            FillStrategy fill = FillStrategy::Diffusion);

// ---- Pair lists -------------------------------------------------------------
// Text file, one "source_path<TAB>target_path" per line; blank lines are
// skipped. Paths are kept verbatim (typically relative to the list's dir).
std::vector<std::pair<std::string, std::string>> load_pair_list(
    const std::string& path);
void save_pair_list(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& pairs);

// ---- Flow pyramid files ------------------------------------------------------
// 8-byte magic "PFLOW01\0", then per level: u32 H, u32 W, then H*W*2
// little-endian float32, (dx, dy) interleaved per pixel, level 0 first.
void save_flow_pyramid(const std::string& path, const FlowPyramid& pyr);
FlowPyramid load_flow_pyramid(const std::string& path);

// ---- Checkpoints --------------------------------------------------------------
// Layout: 8-byte magic "PFCK01\0\0"; u32 record count; per record a name
// (u16 length + bytes), u8 dtype (0 = float32), u8 rank, u32 dims[rank], and
// the u64 absolute byte offset of its payload; then the payloads in record
// order, tightly packed little-endian; then u32 metadata length + a JSON
// blob (stage, epoch, config hash). Saves write to a temp file and rename,
// so a crash never leaves a half-written checkpoint behind. The byte layout
// is a pure function of the contents: save(load(f)) reproduces f exactly.

struct CheckpointMeta {
  std::string stage;  // "flow" | "garment" | "synthesis" | free-form
  int epoch = 0;
  std::string config_hash;  // hex digest of the config snapshot
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;  // saved in this order
  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an existing named-parameter set. Every
// parameter must be present with an identical shape; extra checkpoint
// tensors are ignored (they may be optimizer or power-iteration state).
void assign_from_checkpoint(
    const Checkpoint& ckpt,
    const std::vector<std::pair<std::string, Param*>>& params);

}  // namespace poseflow
