#pragma once

#include <optional>

#include <Eigen/Core>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/warp.hpp"

namespace sphdepth {

/// Per-pixel validity as 0/1 values over an H*W plane.
using Mask = Eigen::ArrayXd;

struct LossWeights {
  double lambda_image = 0.3;
  double lambda_depth = 0.15;
  /// Weight of the L1 term against the SSIM term in the image loss.
  double alpha = 0.15;

  void validate() const;
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-pixel, per-channel SSIM from 3x3 mean-filter statistics.
Tensor ssim(const Tensor& a, const Tensor& b);

/// Mean of x [C, H, W] over the pixels where `mask` (H*W) is set.
Tensor masked_mean(const Tensor& x, const Mask& mask);

/// alpha * L1 + (1 - alpha) * |1 - SSIM| summed over both synthesis
/// directions. `mask` covers V vs V_syn, `mask_prime` covers V' vs V'_syn.
Tensor image_consistency(const Tensor& v, const Tensor& v_syn, const Tensor& v_prime,
                         const Tensor& v_prime_syn, const Mask& mask, const Mask& mask_prime,
                         double alpha);

Tensor depth_consistency(const Tensor& d, const Tensor& d_syn, const Tensor& d_prime,
                         const Tensor& d_prime_syn, const Mask& mask, const Mask& mask_prime);

/// Mean over the four motion components of |forward + backward|; zero when
/// the backward estimate exactly opposes the forward one.
Tensor pose_consistency(const MotionVars& forward, const MotionVars& backward);

/// Least-squares affine fit of a prediction onto ground truth. The fitted
/// scale and shift are constants for backpropagation.
struct AlignedDepth {
  double scale = 1.0;
  double shift = 0.0;
  bool degenerate = false;
  Tensor depth;
};

AlignedDepth align_scale_shift(const Tensor& pred, const Tensor& gt, const Mask& mask);

Tensor pixel_loss(const Tensor& aligned, const Tensor& gt, const Mask& mask);
/// Sum over four dyadic scales of the mean forward-difference magnitude of
/// the residual. H and W must be divisible by 8.
Tensor gradient_loss(const Tensor& aligned, const Tensor& gt, const Mask& mask);

struct LossTerms {
  std::optional<Tensor> image;
  std::optional<Tensor> depth;
  std::optional<Tensor> pose;
  std::optional<Tensor> pixel;
  std::optional<Tensor> gradient;
};

/// lambda_image * L_I + lambda_depth * L_D + L_P + L_pix + L_grad with
/// missing terms contributing zero.
Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace sphdepth
