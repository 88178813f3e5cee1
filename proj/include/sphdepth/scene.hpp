#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/geometry.hpp"
#include "sphdepth/warp.hpp"

namespace sphdepth {

enum class TextureKind {
  Smooth,        // seeded low-frequency solid field, continuous across edges
  Checkerboard,  // two seeded colors per face, square period in meters
  Uniform,       // one seeded color per face
};

/// Axis-aligned box room centered at the origin, +z up.
struct SceneSpec {
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  TextureKind texture = TextureKind::Smooth;
  double checker_period = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Camera center in room coordinates and its yaw about +z.
struct CameraPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
};

struct Frame {
  Tensor rgb;    // [3, H, W] in [0, 1]
  Tensor depth;  // [1, H, W] radial distance
};

/// Deterministic renderer for a SceneSpec.
class Room {
 public:
  explicit Room(SceneSpec spec);

  const SceneSpec& spec() const { return spec_; }

  bool contains(const Eigen::Vector3d& position, double margin = 0.0) const;
  /// Distance from an interior point to the wall along a unit direction.
  double trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const;
  /// Texture color at a point on the room surface.
  Eigen::Vector3d color_at(const Eigen::Vector3d& surface_point) const;

  Frame render(const CameraPose& pose, const PixelGrid& grid) const;

  /// Minimum clearance trajectories keep from the walls.
  double margin() const { return 0.05 * spec_.half_extents.minCoeff(); }

 private:
  struct FaceTexture {
    std::array<Eigen::Vector3d, 2> colors;
  };
  // Solid 3D field for the smooth texture, continuous across room edges.
  struct SolidWave {
    Eigen::Vector3d k;
    double phase, amplitude;
  };

  int face_of(const Eigen::Vector3d& surface_point) const;

  SceneSpec spec_;
  std::array<FaceTexture, 6> faces_;
  Eigen::Vector3d base_;
  std::array<std::array<SolidWave, 3>, 3> field_;  // [channel][component]
};

/// Camera poses and the motions between consecutive poses.
struct Trajectory {
  std::vector<CameraPose> poses;

  /// Straight-line motion along the camera heading, no rotation.
  static Trajectory forward(const CameraPose& start, double step, std::size_t frames);

  std::size_t frames() const { return poses.size(); }
  /// Motion from pose k to pose k + 1, expressed in the frame of pose k + 1.
  CameraMotion motion(std::size_t k) const;
  void validate(const Room& room) const;
};

struct FramePair {
  Tensor v, v_prime;
  Tensor d, d_prime;
  CameraMotion motion;
};

FramePair generate_pair(const Room& room, const Trajectory& trajectory, std::size_t step,
                        const PixelGrid& grid);

/// Writes frame_###.png, depth_###.pfm and motions.json into `dir`; returns
/// the written paths in order.
std::vector<std::filesystem::path> export_dataset(const Room& room, const Trajectory& trajectory,
                                                  const PixelGrid& grid, const std::filesystem::path& dir);

}  // namespace sphdepth
