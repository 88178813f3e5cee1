#pragma once

#include <Eigen/Core>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/geometry.hpp"

namespace sphdepth {

/// Gravity-aligned motion between consecutive frames: translation `dv`
/// (meters, expressed in the destination frame) and yaw `dr_x` (radians).
struct CameraMotion {
  Eigen::Vector3d dv = Eigen::Vector3d::Zero();
  double dr_x = 0.0;

  CameraMotion operator-() const { return {-dv, -dr_x}; }
  bool is_finite() const { return dv.allFinite() && std::isfinite(dr_x); }
  Eigen::Vector4d as_vector() const { return {dv.x(), dv.y(), dv.z(), dr_x}; }
};

/// The four motion components as scalar tensors so they can be optimized.
struct MotionVars {
  Tensor dv_x, dv_y, dv_z, dr_x;

  static MotionVars constant(const CameraMotion& m);
  static MotionVars variable(const CameraMotion& m);
  MotionVars operator-() const;
  CameraMotion value() const;
  std::array<Tensor, 4> components() const { return {dv_x, dv_y, dv_z, dr_x}; }
};

/// Target-frame spherical coordinates of every source pixel.
struct WarpField {
  Tensor theta;  // [1, H, W]
  Tensor phi;
  Tensor rho;
  Eigen::ArrayXd valid;  // 1 where the transformed point is not the origin
};

/// Moves every pixel's scene point into the next camera frame:
/// X' = R_z(-dr_x) X - dv, then back to spherical coordinates.
WarpField reproject(const Tensor& depth, const PixelGrid& grid, const MotionVars& motion);
WarpField reproject(const Tensor& depth, const PixelGrid& grid, const CameraMotion& motion);

inline constexpr double kCoverageThreshold = 1e-6;

struct SplatResult {
  Tensor image;             // normalized splat, zero where uncovered
  Tensor weight;            // [1, H, W] accumulated bilinear weight
  Eigen::ArrayXd coverage;  // H*W, 1 where weight >= kCoverageThreshold
};

/// Normalized bilinear forward splatting of `source` [C, H, W] along `field`.
SplatResult forward_splat(const Tensor& source, const WarpField& field, const PixelGrid& grid);

/// V' as seen from the next viewpoint, rendered from V, its depth and the motion.
SplatResult synthesize_image(const Tensor& image, const Tensor& depth, const MotionVars& motion);
SplatResult synthesize_image(const Tensor& image, const Tensor& depth, const CameraMotion& motion);

/// Depth map re-expressed in the next frame; carries the transformed radii.
SplatResult synthesize_depth(const Tensor& depth, const MotionVars& motion);
SplatResult synthesize_depth(const Tensor& depth, const CameraMotion& motion);

}  // namespace sphdepth
