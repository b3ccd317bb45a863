#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpec/pipeline.hpp"

namespace mpec::suites {

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
  nlohmann::json to_json() const;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kOracleTolerance = 1e-12;

// Central finite differences (h = 1e-5) against the analytic gradients of
// every op, every loss term and every model block, `instances` random
// instances each.
SuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances = 20);

// Vectorized losses and k-NN against the brute-force references, analytic
// baselines, view-swap symmetry, scale invariance and mask exclusivity.
SuiteReport run_oracle_suite(std::uint64_t seed, std::size_t instances = 100,
                             std::size_t mask_pairs = 1000,
                             const pipeline::AugmentationConfig& augmentation = {},
                             const pipeline::GridMaskConfig& masking = {});

}  // namespace mpec::suites
