#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sphdepth/autodiff.hpp"

namespace sphdepth {

/// One registered gradient check: builds a random instance from `seed` and
/// compares tape gradients with central differences.
struct GradCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions& options)> run;
};

/// Every differentiable op, the composite objective and the non-local block.
const std::vector<GradCase>& gradient_suite();

/// A sine whose backward returns +cos for half the elements and -cos for the
/// rest. grad_check must reject it.
GradCase faulty_case();

struct GradCaseSummary {
  std::string name;
  int instances = 0;
  double worst = 0.0;
  bool passed = true;
};

/// Runs `instances` seeds of each case whose name equals `only` (all cases
/// when empty). With `inject_fault` the faulty case is appended.
std::vector<GradCaseSummary> run_gradient_suite(const std::string& only = "", int instances = 20,
                                                bool inject_fault = false,
                                                const GradCheckOptions& options = {});

}  // namespace sphdepth
