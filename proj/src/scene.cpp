#include "sphdepth/scene.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "sphdepth/io.hpp"

namespace sphdepth {

namespace {

// splitmix64: identical streams on every platform, unlike std distributions.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * double(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

}  // namespace

void SceneSpec::validate() const {
  if (!half_extents.allFinite() || (half_extents.array() <= 0.0).any()) {
    fail(ErrorKind::InvalidInput, "SceneSpec: half extents must be finite and positive");
  }
  if (texture == TextureKind::Checkerboard && !(checker_period > 0.0)) {
    fail(ErrorKind::InvalidInput, "SceneSpec: checker period must be positive");
  }
}

Room::Room(SceneSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  SplitMix rng(spec_.seed);
  for (auto& face : faces_) {
    for (auto& color : face.colors) {
      color = Eigen::Vector3d(rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85));
    }
  }
  for (int c = 0; c < 3; ++c) base_[c] = rng.uniform(0.3, 0.7);
  // Wave numbers in cycles per room width, so the field stays smooth
  // at the coarsest grids that are rendered.
  const double size = 2.0 * spec_.half_extents.maxCoeff();
  for (auto& channel : field_) {
    for (auto& wave : channel) {
      Eigen::Vector3d dir(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      if (dir.norm() < 1e-3) dir = Eigen::Vector3d::UnitX();
      const double freq = rng.uniform(0.4, 1.2);
      wave = {2.0 * std::numbers::pi * freq / size * dir.normalized(), rng.uniform(0.0, 2.0 * std::numbers::pi),
              rng.uniform(0.12, 0.22)};
    }
  }
}

bool Room::contains(const Eigen::Vector3d& position, double margin) const {
  return position.allFinite() && (position.array().abs() < spec_.half_extents.array() - margin).all();
}

double Room::trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const {
  double best = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double d = direction[axis];
    if (d == 0.0) continue;
    const double wall = d > 0.0 ? spec_.half_extents[axis] : -spec_.half_extents[axis];
    best = std::min(best, (wall - origin[axis]) / d);
  }
  return best;
}

int Room::face_of(const Eigen::Vector3d& p) const {
  // Face whose plane the point is closest to: 0/1 = +x/-x, 2/3 = +y/-y, 4/5 = +z/-z.
  int face = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double gap = spec_.half_extents[axis] - std::abs(p[axis]);
    if (gap < best) {
      best = gap;
      face = 2 * axis + (p[axis] < 0.0 ? 1 : 0);
    }
  }
  return face;
}

Eigen::Vector3d Room::color_at(const Eigen::Vector3d& p) const {
  const int face = face_of(p);
  const int axis = face / 2;
  const int ua = (axis + 1) % 3;
  const int va = (axis + 2) % 3;
  const FaceTexture& tex = faces_[face];
  switch (spec_.texture) {
    case TextureKind::Uniform:
      return tex.colors[0];
    case TextureKind::Checkerboard: {
      const auto cell = [&](int a) { return std::int64_t(std::floor(p[a] / spec_.checker_period)); };
      return tex.colors[(cell(ua) + cell(va)) & 1];
    }
    case TextureKind::Smooth:
      break;
  }
  Eigen::Vector3d rgb;
  for (int c = 0; c < 3; ++c) {
    double value = base_[c];
    for (const SolidWave& w : field_[c]) value += w.amplitude * std::sin(w.k.dot(p) + w.phase);
    rgb[c] = std::clamp(value, 0.0, 1.0);
  }
  return rgb;
}

Frame Room::render(const CameraPose& pose, const PixelGrid& grid) const {
  if (!contains(pose.position)) fail(ErrorKind::InvalidInput, "render: camera position outside the room");
  if (!std::isfinite(pose.yaw)) fail(ErrorKind::InvalidInput, "render: non-finite yaw");
  const Index h = grid.height(), w = grid.width(), n = grid.size();
  Eigen::ArrayXd rgb(3 * n);
  Eigen::ArrayXd depth(n);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const SphericalPointd ray{grid.theta(double(x)) + pose.yaw, grid.phi(double(y)), 1.0};
      const Eigen::Vector3d dir = sph_to_cart(ray);
      const double t = trace(pose.position, dir);
      const Eigen::Vector3d color = color_at(pose.position + t * dir);
      const Index i = y * w + x;
      depth[i] = t;
      for (int c = 0; c < 3; ++c) rgb[c * n + i] = color[c];
    }
  }
  return {Tensor({3, h, w}, std::move(rgb)), Tensor({1, h, w}, std::move(depth))};
}

Trajectory Trajectory::forward(const CameraPose& start, double step, std::size_t frames) {
  if (frames == 0) fail(ErrorKind::InvalidInput, "Trajectory: need at least one frame");
  if (!std::isfinite(step)) fail(ErrorKind::InvalidInput, "Trajectory: non-finite step");
  Trajectory t;
  const Eigen::Vector3d heading(std::cos(start.yaw), std::sin(start.yaw), 0.0);
  for (std::size_t k = 0; k < frames; ++k) {
    t.poses.push_back({start.position + double(k) * step * heading, start.yaw});
  }
  return t;
}

CameraMotion Trajectory::motion(std::size_t k) const {
  if (k + 1 >= poses.size()) fail(ErrorKind::InvalidInput, "Trajectory: no motion after the last pose");
  const CameraPose& a = poses[k];
  const CameraPose& b = poses[k + 1];
  const Eigen::Vector3d delta = b.position - a.position;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  CameraMotion m;
  m.dv = Eigen::Vector3d(c * delta.x() + s * delta.y(), -s * delta.x() + c * delta.y(), delta.z());
  m.dr_x = b.yaw - a.yaw;
  return m;
}

void Trajectory::validate(const Room& room) const {
  if (poses.empty()) fail(ErrorKind::InvalidInput, "Trajectory: no poses");
  for (const CameraPose& p : poses) {
    if (!room.contains(p.position, room.margin())) {
      fail(ErrorKind::InvalidInput, "Trajectory: pose leaves the room interior margin");
    }
  }
}

FramePair generate_pair(const Room& room, const Trajectory& trajectory, std::size_t step,
                        const PixelGrid& grid) {
  trajectory.validate(room);
  const CameraMotion motion = trajectory.motion(step);
  Frame a = room.render(trajectory.poses[step], grid);
  Frame b = room.render(trajectory.poses[step + 1], grid);
  return {a.rgb, b.rgb, a.depth, b.depth, motion};
}

std::vector<std::filesystem::path> export_dataset(const Room& room, const Trajectory& trajectory,
                                                  const PixelGrid& grid, const std::filesystem::path& dir) {
  trajectory.validate(room);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "export_dataset: cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  char name[32];
  for (std::size_t k = 0; k < trajectory.frames(); ++k) {
    const Frame frame = room.render(trajectory.poses[k], grid);
    std::snprintf(name, sizeof name, "frame_%03zu.png", k);
    write_png(dir / name, frame.rgb);
    written.push_back(dir / name);
    std::snprintf(name, sizeof name, "depth_%03zu.pfm", k);
    write_pfm(dir / name, frame.depth);
    written.push_back(dir / name);
  }
  std::vector<CameraMotion> motions;
  for (std::size_t k = 0; k + 1 < trajectory.frames(); ++k) motions.push_back(trajectory.motion(k));
  write_motions(dir / "motions.json", motions);
  written.push_back(dir / "motions.json");
  return written;
}

}  // namespace sphdepth
