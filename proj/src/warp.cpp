#include "sphdepth/warp.hpp"

#include <numbers>

namespace sphdepth {

using Eigen::ArrayXd;

MotionVars MotionVars::constant(const CameraMotion& m) {
  return {Tensor::scalar(m.dv.x()), Tensor::scalar(m.dv.y()), Tensor::scalar(m.dv.z()),
          Tensor::scalar(m.dr_x)};
}

MotionVars MotionVars::variable(const CameraMotion& m) {
  auto var = [](double v) { return Tensor::variable({}, ArrayXd::Constant(1, v)); };
  return {var(m.dv.x()), var(m.dv.y()), var(m.dv.z()), var(m.dr_x)};
}

MotionVars MotionVars::operator-() const { return {-dv_x, -dv_y, -dv_z, -dr_x}; }

CameraMotion MotionVars::value() const {
  return {Eigen::Vector3d(dv_x.item(), dv_y.item(), dv_z.item()), dr_x.item()};
}

namespace {

PixelGrid grid_of(const Tensor& map, const char* op) {
  if (map.rank() != 3) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": expected [C, H, W], got " + to_string(map.shape()));
  }
  return PixelGrid(map.dim(1), map.dim(2));
}

void check_depth(const Tensor& depth, const PixelGrid& grid) {
  if (depth.numel() != grid.size()) {
    fail(ErrorKind::InvalidInput, "reproject: depth of shape " + to_string(depth.shape()) +
                                      " does not match a " + std::to_string(grid.height()) + "x" +
                                      std::to_string(grid.width()) + " grid");
  }
  if (!depth.value().allFinite() || (depth.value() <= 0.0).any()) {
    fail(ErrorKind::InvalidInput, "reproject: depth must be finite and strictly positive");
  }
}

}  // namespace

WarpField reproject(const Tensor& depth, const PixelGrid& grid, const MotionVars& motion) {
  check_depth(depth, grid);
  for (const Tensor& c : motion.components()) {
    if (c.numel() != 1 || !std::isfinite(c.item())) {
      fail(ErrorKind::InvalidInput, "reproject: motion components must be finite scalars");
    }
  }
  const Index h = grid.height(), w = grid.width(), n = grid.size();
  const Shape plane{1, h, w};
  const Tensor angles = grid_angles(grid);
  const Tensor theta(plane, angles.value().head(n));
  const Tensor phi(plane, angles.value().tail(n));
  const Tensor sin_phi(plane, phi.value().sin());
  const Tensor cos_phi(plane, phi.value().cos());

  const Tensor rho = reshape(depth, plane);
  const Tensor yawed = theta - motion.dr_x;
  const Tensor horizontal = rho * sin_phi;
  Tensor x = horizontal * cos(yawed) - motion.dv_x;
  const Tensor y = horizontal * sin(yawed) - motion.dv_y;
  const Tensor z = rho * cos_phi - motion.dv_z;

  // Points that land on the new camera center have no direction; they are
  // nudged off the origin so the math stays finite and then masked out.
  const ArrayXd radius2 = x.value().square() + y.value().square() + z.value().square();
  const ArrayXd scale2 = depth.value().square().max(1.0);
  WarpField field;
  field.valid = (radius2 > 1e-24 * scale2).cast<double>();
  if ((field.valid < 1.0).any()) x = x + Tensor(plane, 1.0 - field.valid);

  const Tensor planar2 = square(x) + square(y);
  field.rho = sqrt(planar2 + square(z));
  field.theta = wrap_angle(atan2(y, x));
  field.phi = atan2(sqrt(planar2), z);
  return field;
}

WarpField reproject(const Tensor& depth, const PixelGrid& grid, const CameraMotion& motion) {
  return reproject(depth, grid, MotionVars::constant(motion));
}

SplatResult forward_splat(const Tensor& source, const WarpField& field, const PixelGrid& grid) {
  const PixelGrid source_grid = grid_of(source, "forward_splat");
  if (!(source_grid == grid) || field.theta.numel() != grid.size() || field.phi.numel() != grid.size() ||
      field.valid.size() != grid.size()) {
    fail(ErrorKind::InvalidInput, "forward_splat: source, field and grid shapes disagree");
  }
  const Index h = grid.height(), w = grid.width();
  const Shape plane{1, h, w};
  const Tensor px = field.theta * (double(w) / (2.0 * std::numbers::pi)) - 0.5;
  const Tensor py = field.phi * (double(h) / std::numbers::pi) - 0.5;

  const Tensor valid(plane, field.valid);
  const bool all_valid = (field.valid >= 1.0).all();
  const Tensor accum = bilinear_splat(all_valid ? source : source * valid, px, py);

  SplatResult result;
  result.weight = bilinear_splat(valid, px, py);
  result.coverage = (result.weight.value() >= kCoverageThreshold).cast<double>();
  const Tensor covered(plane, result.coverage);
  const Tensor safe_weight = result.weight + Tensor(plane, 1.0 - result.coverage);
  result.image = accum / safe_weight * covered;
  return result;
}

SplatResult synthesize_image(const Tensor& image, const Tensor& depth, const MotionVars& motion) {
  const PixelGrid grid = grid_of(image, "synthesize_image");
  return forward_splat(image, reproject(depth, grid, motion), grid);
}

SplatResult synthesize_image(const Tensor& image, const Tensor& depth, const CameraMotion& motion) {
  return synthesize_image(image, depth, MotionVars::constant(motion));
}

SplatResult synthesize_depth(const Tensor& depth, const MotionVars& motion) {
  const PixelGrid grid = grid_of(depth, "synthesize_depth");
  if (depth.dim(0) != 1) fail(ErrorKind::InvalidInput, "synthesize_depth: depth must be [1, H, W]");
  const WarpField field = reproject(depth, grid, motion);
  return forward_splat(field.rho, field, grid);
}

SplatResult synthesize_depth(const Tensor& depth, const CameraMotion& motion) {
  return synthesize_depth(depth, MotionVars::constant(motion));
}

}  // namespace sphdepth
