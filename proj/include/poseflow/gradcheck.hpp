#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace poseflow {

// One finite-difference comparison: max over checked input elements of
// |fd - grad| / (max(|fd|, |grad|) + 2e-4), against a shared threshold.
struct GradCheckEntry {
  std::string name;
  double max_err = 0.0;
  double tol = 1e-2;
  bool pass = false;
};

// Central-difference checks across the differentiable op set, each on small
// random tensors under a fixed random projection loss. Flow fields use
// fractional displacements so no sample lands on a bilinear kink.
std::vector<GradCheckEntry> run_gradcheck(uint64_t seed = 17);

bool gradcheck_all_pass(const std::vector<GradCheckEntry>& entries);

}  // namespace poseflow
