#include "sphdepth/nonlocal.hpp"

#include <random>

namespace sphdepth {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void NonLocalWeights::validate() const {
  const Index c = channels();
  if (c < 2 || c % 2) fail(ErrorKind::InvalidInput, "NonLocalWeights: channel count must be even and >= 2");
  auto check = [](const Eigen::MatrixXd& m, Index rows, Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
      fail(ErrorKind::InvalidInput, std::string("NonLocalWeights: ") + name + " must be " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (!m.allFinite()) fail(ErrorKind::InvalidInput, std::string("NonLocalWeights: ") + name + " not finite");
  };
  check(theta, c / 2, c, "theta");
  check(phi, c / 2, c, "phi");
  check(g, c / 2, c, "g");
  check(z, c, c / 2, "z");
}

namespace {
Eigen::MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}
}  // namespace

NonLocalWeights NonLocalWeights::initial(Index channels, std::uint64_t seed, double stddev) {
  NonLocalWeights w = random(channels, seed, stddev);
  w.z.setZero();
  return w;
}

NonLocalWeights NonLocalWeights::random(Index channels, std::uint64_t seed, double stddev) {
  if (channels < 2 || channels % 2) {
    fail(ErrorKind::InvalidInput, "NonLocalWeights: channel count must be even and >= 2");
  }
  std::mt19937_64 rng(seed);
  const Index half = channels / 2;
  NonLocalWeights w;
  w.theta = gaussian(half, channels, rng, stddev);
  w.phi = gaussian(half, channels, rng, stddev);
  w.g = gaussian(half, channels, rng, stddev);
  w.z = gaussian(channels, half, rng, stddev);
  return w;
}

namespace {
Tensor matrix_tensor(const Eigen::MatrixXd& m, bool variable) {
  RowMajorMatrix rm = m;
  Eigen::ArrayXd flat = Eigen::Map<const Eigen::ArrayXd>(rm.data(), rm.size());
  Shape shape{m.rows(), m.cols()};
  return variable ? Tensor::variable(shape, flat) : Tensor(shape, flat);
}

struct Projections {
  Tensor x;         // [C, n]
  Tensor affinity;  // [n, n], row-stochastic
  Tensor g;         // [C/2, n]
};

Projections project(const Tensor& features, const NonLocalParams& w) {
  if (features.rank() != 3) {
    fail(ErrorKind::InvalidInput, "non_local: features must be [C, H, W], got " + to_string(features.shape()));
  }
  const Index c = features.dim(0);
  const Index n = features.dim(1) * features.dim(2);
  if (w.theta.rank() != 2 || w.theta.dim(1) != c || w.z.rank() != 2 || w.z.dim(0) != c) {
    fail(ErrorKind::InvalidInput, "non_local: weights expect " + std::to_string(w.theta.rank() == 2 ? w.theta.dim(1) : 0) +
                                      " channels, features have " + std::to_string(c));
  }
  Projections p;
  p.x = reshape(features, {c, n});
  const Tensor queries = matmul(w.theta, p.x);
  const Tensor keys = matmul(w.phi, p.x);
  p.g = matmul(w.g, p.x);
  p.affinity = softmax_rows(matmul(transpose(queries), keys));
  return p;
}
}  // namespace

NonLocalParams NonLocalParams::constant(const NonLocalWeights& w) {
  w.validate();
  return {matrix_tensor(w.theta, false), matrix_tensor(w.phi, false), matrix_tensor(w.g, false),
          matrix_tensor(w.z, false)};
}

NonLocalParams NonLocalParams::variable(const NonLocalWeights& w) {
  w.validate();
  return {matrix_tensor(w.theta, true), matrix_tensor(w.phi, true), matrix_tensor(w.g, true),
          matrix_tensor(w.z, true)};
}

Tensor non_local_forward(const Tensor& features, const NonLocalParams& w) {
  const Projections p = project(features, w);
  // Row i of the affinity weights every position j; aggregate g_j accordingly.
  const Tensor aggregated = matmul(p.g, transpose(p.affinity));
  return reshape(p.x + matmul(w.z, aggregated), features.shape());
}

Tensor non_local_forward(const Tensor& features, const NonLocalWeights& w) {
  return non_local_forward(features, NonLocalParams::constant(w));
}

Tensor attention_row_stochastic(const Tensor& features, const NonLocalParams& w) {
  return project(features, w).affinity;
}

Tensor attention_row_stochastic(const Tensor& features, const NonLocalWeights& w) {
  return attention_row_stochastic(features, NonLocalParams::constant(w));
}

}  // namespace sphdepth
