#include "sphdepth/losses.hpp"

#include <cmath>

namespace sphdepth {

using Eigen::ArrayXd;

void LossWeights::validate() const {
  if (!(lambda_image >= 0.0) || !(lambda_depth >= 0.0) || !std::isfinite(lambda_image) ||
      !std::isfinite(lambda_depth)) {
    fail(ErrorKind::InvalidInput, "LossWeights: lambdas must be finite and non-negative");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidInput, "LossWeights: alpha must lie in [0, 1]");
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": shapes differ " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
  }
}

Index plane_of(const Tensor& x, const char* op) {
  if (x.rank() != 3) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": expected [C, H, W], got " + to_string(x.shape()));
  }
  return x.dim(1) * x.dim(2);
}

Tensor plane_tensor(const Tensor& like, const ArrayXd& values) {
  return Tensor({1, like.dim(1), like.dim(2)}, values);
}

}  // namespace

Tensor ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  plane_of(a, "ssim");
  const Tensor mu_a = box_filter3(a);
  const Tensor mu_b = box_filter3(b);
  const Tensor var_a = box_filter3(square(a)) - square(mu_a);
  const Tensor var_b = box_filter3(square(b)) - square(mu_b);
  const Tensor cov = box_filter3(a * b) - mu_a * mu_b;
  const Tensor num = (2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2);
  const Tensor den = (square(mu_a) + square(mu_b) + kSsimC1) * (var_a + var_b + kSsimC2);
  return num / den;
}

Tensor masked_mean(const Tensor& x, const Mask& mask) {
  const Index plane = plane_of(x, "masked_mean");
  if (mask.size() != plane) {
    fail(ErrorKind::InvalidInput, "masked_mean: mask holds " + std::to_string(mask.size()) +
                                      " entries for a plane of " + std::to_string(plane));
  }
  const double count = mask.sum() * double(x.dim(0));
  if (!(count > 0.0)) fail(ErrorKind::DegenerateCoverage, "masked_mean: mask selects no pixels");
  return sum(x * plane_tensor(x, mask)) / count;
}

Tensor image_consistency(const Tensor& v, const Tensor& v_syn, const Tensor& v_prime,
                         const Tensor& v_prime_syn, const Mask& mask, const Mask& mask_prime,
                         double alpha) {
  require_same(v, v_syn, "image_consistency");
  require_same(v_prime, v_prime_syn, "image_consistency");
  require_same(v, v_prime, "image_consistency");
  auto direction = [alpha](const Tensor& real, const Tensor& synth, const Mask& m) {
    Tensor per_pixel = alpha * smooth_abs(real - synth);
    if (alpha < 1.0) per_pixel = per_pixel + (1.0 - alpha) * smooth_abs(1.0 - ssim(real, synth));
    return masked_mean(per_pixel, m);
  };
  return direction(v_prime, v_prime_syn, mask_prime) + direction(v, v_syn, mask);
}

Tensor depth_consistency(const Tensor& d, const Tensor& d_syn, const Tensor& d_prime,
                         const Tensor& d_prime_syn, const Mask& mask, const Mask& mask_prime) {
  require_same(d, d_syn, "depth_consistency");
  require_same(d_prime, d_prime_syn, "depth_consistency");
  return masked_mean(smooth_abs(d_prime - d_prime_syn), mask_prime) +
         masked_mean(smooth_abs(d - d_syn), mask);
}

Tensor pose_consistency(const MotionVars& forward, const MotionVars& backward) {
  const auto f = forward.components();
  const auto b = backward.components();
  Tensor total = smooth_abs(f[0] + b[0]);
  for (int k = 1; k < 4; ++k) total = total + smooth_abs(f[k] + b[k]);
  return total / 4.0;
}

AlignedDepth align_scale_shift(const Tensor& pred, const Tensor& gt, const Mask& mask) {
  require_same(pred, gt, "align_scale_shift");
  if (mask.size() != pred.numel()) fail(ErrorKind::InvalidInput, "align_scale_shift: mask size mismatch");
  const ArrayXd& p = pred.value();
  const ArrayXd& g = gt.value();
  const double n = mask.sum();
  if (n < 2.0) fail(ErrorKind::DegenerateCoverage, "align_scale_shift: need at least 2 valid pixels");

  // Normal equations of min sum (s p + t - g)^2, solved in centered form.
  const double p_mean = (mask * p).sum() / n;
  const double g_mean = (mask * g).sum() / n;
  const ArrayXd pc = mask * (p - p_mean);
  const ArrayXd gc = mask * (g - g_mean);
  const double spp = pc.square().sum();
  const double spg = (pc * gc).sum();

  AlignedDepth out;
  if (spp <= 1e-24 * std::max(1.0, n * p_mean * p_mean)) {
    out.degenerate = true;
    out.scale = 1.0;
    out.shift = g_mean - p_mean;
  } else {
    out.scale = spg / spp;
    out.shift = g_mean - out.scale * p_mean;
  }
  out.depth = pred * out.scale + out.shift;
  return out;
}

Tensor pixel_loss(const Tensor& aligned, const Tensor& gt, const Mask& mask) {
  require_same(aligned, gt, "pixel_loss");
  return masked_mean(smooth_abs(aligned - gt), mask);
}

namespace {

// Pairs of horizontally / vertically adjacent valid pixels.
Mask pair_mask_x(const Mask& m, Index h, Index w) {
  Mask out(h * (w - 1));
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c + 1 < w; ++c) out[r * (w - 1) + c] = m[r * w + c] * m[r * w + c + 1];
  return out;
}

Mask pair_mask_y(const Mask& m, Index h, Index w) {
  Mask out((h - 1) * w);
  for (Index r = 0; r + 1 < h; ++r)
    for (Index c = 0; c < w; ++c) out[r * w + c] = m[r * w + c] * m[(r + 1) * w + c];
  return out;
}

Mask and_pool2(const Mask& m, Index h, Index w) {
  Mask out((h / 2) * (w / 2));
  for (Index r = 0; r < h / 2; ++r) {
    for (Index c = 0; c < w / 2; ++c) {
      const Index base = 2 * r * w + 2 * c;
      out[r * (w / 2) + c] = m[base] * m[base + 1] * m[base + w] * m[base + w + 1];
    }
  }
  return out;
}

}  // namespace

Tensor gradient_loss(const Tensor& aligned, const Tensor& gt, const Mask& mask) {
  require_same(aligned, gt, "gradient_loss");
  const Index plane = plane_of(aligned, "gradient_loss");
  Index h = aligned.dim(1), w = aligned.dim(2);
  if (h % 8 || w % 8) {
    fail(ErrorKind::InvalidInput, "gradient_loss: H and W must be divisible by 8, got " +
                                      to_string(aligned.shape()));
  }
  if (mask.size() != plane) fail(ErrorKind::InvalidInput, "gradient_loss: mask size mismatch");
  if (!(mask.sum() > 0.0)) fail(ErrorKind::DegenerateCoverage, "gradient_loss: mask selects no pixels");

  Tensor residual = aligned - gt;
  Mask m = mask;
  Tensor total = Tensor::scalar(0.0);
  for (int scale = 0; scale < 4; ++scale) {
    if (scale > 0) {
      residual = avg_pool2(residual);
      m = and_pool2(m, h, w);
      h /= 2;
      w /= 2;
    }
    const Mask mx = pair_mask_x(m, h, w);
    const Mask my = pair_mask_y(m, h, w);
    if (mx.sum() > 0.0) total = total + masked_mean(smooth_abs(diff_x(residual)), mx);
    if (my.sum() > 0.0) total = total + masked_mean(smooth_abs(diff_y(residual)), my);
  }
  return total;
}

Tensor total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  Tensor total = Tensor::scalar(0.0);
  if (terms.image) total = total + weights.lambda_image * *terms.image;
  if (terms.depth) total = total + weights.lambda_depth * *terms.depth;
  if (terms.pose) total = total + *terms.pose;
  if (terms.pixel) total = total + *terms.pixel;
  if (terms.gradient) total = total + *terms.gradient;
  return total;
}

}  // namespace sphdepth
