#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/losses.hpp"
#include "sphdepth/warp.hpp"

namespace sphdepth {

enum class FlowSchedule { SelfOnly, SupervisedOnly, JointRandom };

enum class DepthParameterization {
  Log,     // depth = exp(u)
  Linear,  // depth = u, kept above a small floor after each update
};

/// Which motion components are optimized. ForwardOnly frees dv_x alone.
enum class MotionModel { Full, ForwardOnly };

const char* to_string(FlowSchedule flow);
FlowSchedule parse_flow(const std::string& name);

struct OptimConfig {
  int iterations = 2000;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  LossWeights weights;
  DepthParameterization parameterization = DepthParameterization::Log;
  double init_depth = 0.5;
  /// Degrees of colatitude removed at each pole before losses are taken.
  double crop_degrees = 45.0;
  FlowSchedule flow = FlowSchedule::SelfOnly;
  /// Probability that a joint-random step runs the self-supervised flow.
  double self_probability = 0.5;
  std::uint64_t seed = 0;
  MotionModel motion_model = MotionModel::Full;
  CameraMotion init_motion;
  /// Optional warm start, [1, H, W] each; init_depth fills any that are unset.
  std::optional<Tensor> init_depth_map;
  std::optional<Tensor> init_depth_map_prime;

  void validate() const;
};

struct TraceRecord {
  int iteration = 0;
  std::string flow;
  double image = 0, depth = 0, pose = 0, pixel = 0, gradient = 0, total = 0;
};

struct OptimResult {
  Tensor depth;        // recovered depth of the first frame
  Tensor depth_prime;  // and of the second
  CameraMotion forward;
  CameraMotion backward;
  std::vector<TraceRecord> trace;
};

/// Raised when the objective stops being finite; carries the trace so far.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<TraceRecord> trace)
      : Error(ErrorKind::Divergence, what), trace_(std::move(trace)) {}
  const std::vector<TraceRecord>& trace() const { return trace_; }

 private:
  std::vector<TraceRecord> trace_;
};

/// Rows [first, first + count) that survive removing `degrees` of
/// colatitude around each pole.
struct RowRange {
  Index first = 0;
  Index count = 0;
};
RowRange fovy_rows(Index height, double degrees);

/// Drops near-pole rows of a [C, H, W] map.
Tensor crop_fovy(const Tensor& map, double degrees);

/// H*W mask that is 1 on the rows kept by crop_fovy.
Mask fovy_mask(Index height, Index width, double degrees);

inline constexpr double kUnitIntervalMargin = 1e-6;

/// Ground truth divided by its maximum; prediction clamped into (0, 1).
std::pair<Tensor, Tensor> robust_adjust(const Tensor& pred, const Tensor& gt);

/// Joint recovery of per-pixel depth for both frames and the two directed
/// motions by Adam on the scheduled flow's objective.
OptimResult optimize_pair(const Tensor& v, const Tensor& v_prime, const OptimConfig& config,
                          const std::optional<Tensor>& gt = std::nullopt,
                          const std::optional<Tensor>& gt_prime = std::nullopt);

}  // namespace sphdepth
