#include "sphdepth/geometry.hpp"

namespace sphdepth {

Tensor grid_angles(const PixelGrid& grid) {
  const Index h = grid.height(), w = grid.width();
  Eigen::ArrayXd angles(2 * h * w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      angles[y * w + x] = grid.theta(double(x));
      angles[h * w + y * w + x] = grid.phi(double(y));
    }
  }
  return Tensor({2, h, w}, std::move(angles));
}

Tensor grid_angles(Index height, Index width) { return grid_angles(PixelGrid(height, width)); }

}  // namespace sphdepth
