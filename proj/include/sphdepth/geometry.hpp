#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/error.hpp"

namespace sphdepth {

template <typename T>
inline constexpr T kTwoPi = T(2) * std::numbers::pi_v<T>;

/// Longitude `theta` in [0, 2pi) measured from +x toward +y, colatitude `phi`
/// in (0, pi) measured from +z, radial distance `rho`.
template <typename T>
struct SphericalPoint {
  T theta{0};
  T phi{0};
  T rho{1};
};

template <typename T>
using CartesianPoint = Eigen::Matrix<T, 3, 1>;

using SphericalPointd = SphericalPoint<double>;
using CartesianPointd = CartesianPoint<double>;

/// Wraps an angle into [0, 2pi).
template <typename T>
T wrap_two_pi(T angle) {
  T wrapped = std::fmod(angle, kTwoPi<T>);
  if (wrapped < T(0)) wrapped += kTwoPi<T>;
  // fmod of a tiny negative value can round up to exactly 2pi.
  if (wrapped >= kTwoPi<T>) wrapped = T(0);
  return wrapped;
}

template <typename T>
CartesianPoint<T> sph_to_cart(const SphericalPoint<T>& p) {
  if (!std::isfinite(p.theta) || !std::isfinite(p.phi) || !std::isfinite(p.rho)) {
    fail(ErrorKind::InvalidInput, "sph_to_cart: non-finite spherical coordinate");
  }
  const T sin_phi = std::sin(p.phi);
  return {p.rho * sin_phi * std::cos(p.theta), p.rho * sin_phi * std::sin(p.theta),
          p.rho * std::cos(p.phi)};
}

/// Inverse of `sph_to_cart`. Points on the z axis get theta = 0.
template <typename T>
SphericalPoint<T> cart_to_sph(const CartesianPoint<T>& c) {
  if (!c.allFinite()) fail(ErrorKind::InvalidInput, "cart_to_sph: non-finite coordinate");
  const T planar = std::hypot(c.x(), c.y());
  const T rho = std::hypot(planar, c.z());
  if (rho == T(0)) fail(ErrorKind::SingularPoint, "cart_to_sph: zero vector has no direction");
  SphericalPoint<T> p;
  p.theta = planar == T(0) ? T(0) : wrap_two_pi(std::atan2(c.y(), c.x()));
  p.phi = std::atan2(planar, c.z());
  p.rho = rho;
  return p;
}

/// Rotates a point about the vertical axis by `dr_x` (the camera yaw), i.e.
/// theta' = theta - dr_x. phi and rho are copied untouched.
template <typename T>
SphericalPoint<T> yaw_rotate(const SphericalPoint<T>& p, T dr_x) {
  if (!std::isfinite(dr_x) || !std::isfinite(p.theta)) {
    fail(ErrorKind::InvalidInput, "yaw_rotate: non-finite angle");
  }
  return {wrap_two_pi(p.theta - dr_x), p.phi, p.rho};
}

/// Equirectangular pixel grid, W = 2H, pixel-center angle convention.
class PixelGrid {
 public:
  PixelGrid(Eigen::Index height, Eigen::Index width) : height_(height), width_(width) {
    if (height < 2) fail(ErrorKind::InvalidInput, "PixelGrid: height must be >= 2");
    if (width != 2 * height) {
      fail(ErrorKind::AspectRatio, "PixelGrid: width must equal 2 * height (got " +
                                       std::to_string(height) + "x" + std::to_string(width) + ")");
    }
  }
  explicit PixelGrid(Eigen::Index height) : PixelGrid(height, 2 * height) {}

  Eigen::Index height() const { return height_; }
  Eigen::Index width() const { return width_; }
  Eigen::Index size() const { return height_ * width_; }

  template <typename T = double>
  T theta(T x) const {
    return (x + T(0.5)) * kTwoPi<T> / T(width_);
  }
  template <typename T = double>
  T phi(T y) const {
    return (y + T(0.5)) * std::numbers::pi_v<T> / T(height_);
  }
  /// Continuous pixel coordinates of a direction; inverse of theta()/phi().
  template <typename T = double>
  T column(T theta) const {
    return theta * T(width_) / kTwoPi<T> - T(0.5);
  }
  template <typename T = double>
  T row(T phi) const {
    return phi * T(height_) / std::numbers::pi_v<T> - T(0.5);
  }

  bool operator==(const PixelGrid&) const = default;

 private:
  Eigen::Index height_;
  Eigen::Index width_;
};

/// [2, H, W] tensor of per-pixel (theta, phi) centers.
Tensor grid_angles(const PixelGrid& grid);
Tensor grid_angles(Index height, Index width);

}  // namespace sphdepth
