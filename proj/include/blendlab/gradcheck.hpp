#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blendlab/netcore.hpp"

namespace blendlab {

struct GradientSuiteConfig {
  int seeds = 20;
  std::uint64_t base_seed = 1;
  int image_size = 16;     // small encoder keeps the suite fast
  std::size_t coords = 200;  // sampled coordinates per objective (per tensor for parameters)
  double h = 1e-5;
  double tolerance = 1e-5;
};

struct GradientSuiteEntry {
  std::string name;
  GradCheckReport report;  // worst case over all seeds
};

struct GradientSuiteReport {
  std::vector<GradientSuiteEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// 64-bit central-difference checks of the encoder map, the margin loss and every swap loss term.
GradientSuiteReport run_gradient_suite(const GradientSuiteConfig& cfg);

}  // namespace blendlab
