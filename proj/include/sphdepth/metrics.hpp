#pragma once

#include <string>

#include <json.hpp>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/losses.hpp"

namespace sphdepth {

/// Standard depth error statistics over a set of valid pixels.
struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double rms_log = 0.0;
  double delta1 = 0.0;  // fraction with max(p/g, g/p) < 1.25
  double delta2 = 0.0;  // ... < 1.25^2
  double delta3 = 0.0;  // ... < 1.25^3
  Index count = 0;
};

/// gt > 0 and finite.
Mask valid_depth_mask(const Tensor& gt);

/// Predictions that are not strictly positive are left out of rms_log and
/// count as failures for every delta threshold.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask);

/// Aligns pred to gt (scale and shift over valid pixels), keeps the middle
/// half of the rows and computes the metrics on valid pixels there.
MetricsReport eval_protocol(const Tensor& pred, const Tensor& gt);

/// One "key=value" line per field.
std::string to_key_value(const MetricsReport& report);
void to_json(nlohmann::json& j, const MetricsReport& report);

}  // namespace sphdepth
