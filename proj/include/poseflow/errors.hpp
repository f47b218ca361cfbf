#pragma once

#include <stdexcept>
#include <string>

namespace poseflow {

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& m) : std::runtime_error(m) {}
};
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace poseflow
