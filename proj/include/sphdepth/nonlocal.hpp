#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "sphdepth/autodiff.hpp"

namespace sphdepth {

/// Embedded-Gaussian non-local block weights for C input channels. The
/// theta, phi and g projections reduce to C/2 channels; z maps back to C.
struct NonLocalWeights {
  Eigen::MatrixXd theta;  // [C/2, C]
  Eigen::MatrixXd phi;    // [C/2, C]
  Eigen::MatrixXd g;      // [C/2, C]
  Eigen::MatrixXd z;      // [C, C/2]

  Index channels() const { return theta.cols(); }
  void validate() const;

  /// Gaussian-initialized projections, z = 0 so the block starts as identity.
  static NonLocalWeights initial(Index channels, std::uint64_t seed, double stddev = 0.1);
  /// All four matrices random; used for testing.
  static NonLocalWeights random(Index channels, std::uint64_t seed, double stddev = 0.5);
};

/// The four weight matrices as (possibly watched) tensors.
struct NonLocalParams {
  Tensor theta, phi, g, z;

  static NonLocalParams constant(const NonLocalWeights& w);
  static NonLocalParams variable(const NonLocalWeights& w);
};

/// N_i = F_i + W_z (sum_j f(F_i, F_j) W_g F_j) / sum_j f(F_i, F_j),
/// f(F_i, F_j) = exp((W_theta F_i)^T (W_phi F_j)). F is [C, H, W].
Tensor non_local_forward(const Tensor& features, const NonLocalParams& w);
Tensor non_local_forward(const Tensor& features, const NonLocalWeights& w);

/// Row-normalized affinity matrix [n, n], n = H * W.
Tensor attention_row_stochastic(const Tensor& features, const NonLocalParams& w);
Tensor attention_row_stochastic(const Tensor& features, const NonLocalWeights& w);

}  // namespace sphdepth
