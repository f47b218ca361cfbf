#pragma once

#include <cstdint>
#include <string>

#include "poseflow/training.hpp"

namespace poseflow {

// Everything a run needs beyond the training hyperparameters: dataset shape
// constants, directories, and checkpoint paths. All fields have JSON keys;
// the CLI exposes a flag for each and flags win over the config file.
struct RunConfig {
  TrainConfig train;
  int num_parts = 7;    // pose part channels, background included
  int num_classes = 8;  // garment classes, background included
  int image_size = 64;  // square toy rasters; divisible by 64
  int toy_count = 8;    // pairs the toydata generator emits
  float toy_max_angle_deg = 8.f;
  std::string data_dir;
  std::string out_dir;
  std::string flow_checkpoint;
  std::string garment_checkpoint;
  std::string synth_checkpoint;
};

// Parses a JSON config. Keys mirror the field names; training fields are
// top-level, with "selfsup", "stage1", and "charbonnier" nested objects.
// Unknown keys anywhere are a ConfigError, as are wrong JSON types, wrong
// array lengths, and values that fail TrainConfig::validate().
RunConfig parse_config_json(const std::string& json_text);

// Canonical snapshot: alphabetical keys, 2-space indent, trailing newline.
// parse_config_json(config_snapshot(c)) reproduces c exactly.
std::string config_snapshot(const RunConfig& cfg);

// FNV-1a 64-bit digest of the canonical snapshot, as 16 hex chars.
std::string config_hash(const RunConfig& cfg);

}  // namespace poseflow
