#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rca {

struct GradCheckCase {
  std::string name;
  /// Returns the max relative error of one check.
  std::function<double()> run;
  double threshold = 1e-4;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

/// Every autodiff op (threshold 1e-6) and every composite loss of the
/// training objective on a small seeded model (threshold 1e-4).
std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed = 7);

std::vector<GradCheckResult> run_gradcheck(const std::vector<GradCheckCase>& cases);

}  // namespace rca
