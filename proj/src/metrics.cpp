#include "sphdepth/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace sphdepth {

Mask valid_depth_mask(const Tensor& gt) {
  return gt.value().unaryExpr([](double g) { return std::isfinite(g) && g > 0.0 ? 1.0 : 0.0; });
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask) {
  if (pred.shape() != gt.shape()) {
    fail(ErrorKind::InvalidInput, "compute_metrics: shapes differ " + to_string(pred.shape()) + " vs " +
                                      to_string(gt.shape()));
  }
  if (mask.size() != gt.numel()) fail(ErrorKind::InvalidInput, "compute_metrics: mask size mismatch");
  const auto& p = pred.value();
  const auto& g = gt.value();

  MetricsReport r;
  double abs_rel = 0, sq_rel = 0, sq = 0, log_sq = 0;
  Index log_count = 0, d1 = 0, d2 = 0, d3 = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (mask[i] == 0.0) continue;
    if (!(g[i] > 0.0) || !std::isfinite(g[i])) {
      fail(ErrorKind::InvalidInput, "compute_metrics: ground truth must be positive on the mask");
    }
    ++r.count;
    const double diff = p[i] - g[i];
    abs_rel += std::abs(diff) / g[i];
    sq_rel += diff * diff / g[i];
    sq += diff * diff;
    if (p[i] > 0.0) {
      const double dl = std::log(p[i]) - std::log(g[i]);
      log_sq += dl * dl;
      ++log_count;
      const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
      d1 += ratio < 1.25;
      d2 += ratio < 1.25 * 1.25;
      d3 += ratio < 1.25 * 1.25 * 1.25;
    }
  }
  if (r.count == 0) fail(ErrorKind::DegenerateCoverage, "compute_metrics: no valid pixels");
  const double n = double(r.count);
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rms = std::sqrt(sq / n);
  r.rms_log = log_count ? std::sqrt(log_sq / double(log_count)) : 0.0;
  r.delta1 = double(d1) / n;
  r.delta2 = double(d2) / n;
  r.delta3 = double(d3) / n;
  return r;
}

MetricsReport eval_protocol(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.rank() != 3 || pred.dim(0) != 1) {
    fail(ErrorKind::InvalidInput, "eval_protocol: expected matching [1, H, W] maps, got " +
                                      to_string(pred.shape()) + " and " + to_string(gt.shape()));
  }
  const Mask valid = valid_depth_mask(gt);
  // Holes may hold non-finite values; give them a harmless stand-in.
  const Tensor gt_clean(gt.shape(), (valid > 0.0).select(gt.value(), 1.0));
  const AlignedDepth aligned = align_scale_shift(pred, gt_clean, valid);

  const Index h = pred.dim(1), w = pred.dim(2);
  const Index first = h / 4, rows = h / 2;
  if (rows < 1) fail(ErrorKind::DegenerateCoverage, "eval_protocol: nothing left after cropping");
  const Tensor p = slice_rows(aligned.depth, first, rows);
  const Tensor g = slice_rows(gt_clean, first, rows);
  return compute_metrics(p, g, valid.segment(first * w, rows * w));
}

std::string to_key_value(const MetricsReport& r) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "abs_rel=" << r.abs_rel << '\n'
      << "sq_rel=" << r.sq_rel << '\n'
      << "rms=" << r.rms << '\n'
      << "rms_log=" << r.rms_log << '\n'
      << "delta1=" << r.delta1 << '\n'
      << "delta2=" << r.delta2 << '\n'
      << "delta3=" << r.delta3 << '\n'
      << "count=" << r.count << '\n';
  return out.str();
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"rms", r.rms},       {"rms_log", r.rms_log},
                     {"delta1", r.delta1},   {"delta2", r.delta2}, {"delta3", r.delta3}, {"count", r.count}};
}

}  // namespace sphdepth
