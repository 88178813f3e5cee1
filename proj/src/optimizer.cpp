#include "sphdepth/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace sphdepth {

using Eigen::ArrayXd;

const char* to_string(FlowSchedule flow) {
  switch (flow) {
    case FlowSchedule::SelfOnly: return "self-only";
    case FlowSchedule::SupervisedOnly: return "supervised-only";
    case FlowSchedule::JointRandom: return "joint-random";
  }
  return "unknown";
}

FlowSchedule parse_flow(const std::string& name) {
  if (name == "self-only") return FlowSchedule::SelfOnly;
  if (name == "supervised-only") return FlowSchedule::SupervisedOnly;
  if (name == "joint-random") return FlowSchedule::JointRandom;
  fail(ErrorKind::InvalidInput, "unknown flow schedule '" + name + "'");
}

void OptimConfig::validate() const {
  if (iterations < 1) fail(ErrorKind::InvalidInput, "OptimConfig: iterations must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::InvalidInput, "OptimConfig: learning rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::InvalidInput, "OptimConfig: moment decays must lie in [0, 1)");
  }
  weights.validate();
  if (!(init_depth > 0.0) || !std::isfinite(init_depth)) {
    fail(ErrorKind::InvalidInput, "OptimConfig: initial depth must be positive");
  }
  if (!(crop_degrees >= 0.0 && 2.0 * crop_degrees < 180.0)) {
    fail(ErrorKind::InvalidInput, "OptimConfig: crop must satisfy 0 <= 2 * degrees < 180");
  }
  if (!(self_probability >= 0.0 && self_probability <= 1.0)) {
    fail(ErrorKind::InvalidInput, "OptimConfig: self probability must lie in [0, 1]");
  }
  if (!init_motion.is_finite()) fail(ErrorKind::InvalidInput, "OptimConfig: initial motion must be finite");
}

RowRange fovy_rows(Index height, double degrees) {
  if (!(degrees >= 0.0 && 2.0 * degrees < 180.0)) {
    fail(ErrorKind::InvalidInput, "crop_fovy: need 0 <= 2 * degrees < 180");
  }
  // Keep row y iff its center colatitude lies in [degrees, 180 - degrees].
  const double lo = degrees * std::numbers::pi / 180.0;
  const double hi = std::numbers::pi - lo;
  RowRange range{height, 0};
  for (Index y = 0; y < height; ++y) {
    const double phi = (double(y) + 0.5) * std::numbers::pi / double(height);
    if (phi >= lo - 1e-12 && phi <= hi + 1e-12) {
      range.first = std::min(range.first, y);
      ++range.count;
    }
  }
  if (range.count == 0) fail(ErrorKind::DegenerateCoverage, "crop_fovy: no rows left");
  return range;
}

Tensor crop_fovy(const Tensor& map, double degrees) {
  if (map.rank() != 3) fail(ErrorKind::InvalidInput, "crop_fovy: expected [C, H, W]");
  const RowRange rows = fovy_rows(map.dim(1), degrees);
  if (rows.first == 0 && rows.count == map.dim(1)) return map;
  return slice_rows(map, rows.first, rows.count);
}

Mask fovy_mask(Index height, Index width, double degrees) {
  const RowRange rows = fovy_rows(height, degrees);
  Mask mask = Mask::Zero(height * width);
  mask.segment(rows.first * width, rows.count * width).setOnes();
  return mask;
}

std::pair<Tensor, Tensor> robust_adjust(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) fail(ErrorKind::InvalidInput, "robust_adjust: shapes differ");
  const ArrayXd finite = gt.value().unaryExpr([](double g) { return std::isfinite(g) ? g : 0.0; });
  const double max_gt = finite.maxCoeff();
  if (!(max_gt > 0.0)) fail(ErrorKind::InvalidInput, "robust_adjust: ground-truth maximum must be positive");
  Tensor normalized(gt.shape(), finite / max_gt);
  return {clamp(pred, kUnitIntervalMargin, 1.0 - kUnitIntervalMargin), normalized};
}

namespace {

class Adam {
 public:
  Adam(double lr, double beta1, double beta2) : lr_(lr), beta1_(beta1), beta2_(beta2) {}

  /// Updates every parameter that received a gradient this step.
  void step(std::vector<Tensor>& params) {
    if (state_.size() != params.size()) state_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      if (!p.has_grad()) continue;
      State& s = state_[i];
      if (s.m.size() == 0) {
        s.m = ArrayXd::Zero(p.numel());
        s.v = ArrayXd::Zero(p.numel());
      }
      const ArrayXd g = p.grad();
      ++s.t;
      s.m = beta1_ * s.m + (1.0 - beta1_) * g;
      s.v = beta2_ * s.v + (1.0 - beta2_) * g.square();
      const double c1 = 1.0 - std::pow(beta1_, double(s.t));
      const double c2 = 1.0 - std::pow(beta2_, double(s.t));
      p.mutable_value() -= lr_ * (s.m / c1) / ((s.v / c2).sqrt() + 1e-8);
      p.zero_grad();
    }
  }

 private:
  struct State {
    ArrayXd m, v;
    long t = 0;
  };
  double lr_, beta1_, beta2_;
  std::vector<State> state_;
};

struct Problem {
  const Tensor& v;
  const Tensor& v_prime;
  const OptimConfig& config;
  const std::optional<Tensor>& gt;
  const std::optional<Tensor>& gt_prime;
  Index height, width;
  Mask crop;
  RowRange rows;
};

Tensor realize_depth(const Tensor& latent, const OptimConfig& config) {
  return config.parameterization == DepthParameterization::Log ? exp(latent) : latent;
}

Tensor supervised_term(const Tensor& depth, const Tensor& gt, const Problem& pb, TraceRecord& rec) {
  auto [pred, target] = robust_adjust(depth, gt);
  const Tensor pred_c = slice_rows(pred, pb.rows.first, pb.rows.count);
  const Tensor target_c = slice_rows(target, pb.rows.first, pb.rows.count);
  const Mask valid = (target_c.value() > 0.0).cast<double>();
  if (valid.sum() < 2.0) fail(ErrorKind::DegenerateCoverage, "optimize_pair: no ground truth inside the crop");
  const AlignedDepth aligned = align_scale_shift(pred_c, target_c, valid);
  const Tensor pix = pixel_loss(aligned.depth, target_c, valid);
  const Tensor grad = gradient_loss(aligned.depth, target_c, valid);
  rec.pixel += pix.item();
  rec.gradient += grad.item();
  return pix + grad;
}

}  // namespace

OptimResult optimize_pair(const Tensor& v, const Tensor& v_prime, const OptimConfig& config,
                          const std::optional<Tensor>& gt, const std::optional<Tensor>& gt_prime) {
  config.validate();
  if (v.rank() != 3 || v.shape() != v_prime.shape()) {
    fail(ErrorKind::InvalidInput, "optimize_pair: frames must share a [C, H, W] shape");
  }
  const PixelGrid grid(v.dim(1), v.dim(2));
  const Shape plane{1, grid.height(), grid.width()};
  for (const auto* g : {&gt, &gt_prime}) {
    if (g->has_value() && (*g)->shape() != plane) {
      fail(ErrorKind::InvalidInput, "optimize_pair: ground truth must be " + to_string(plane));
    }
  }
  if (config.flow != FlowSchedule::SelfOnly && !gt) {
    fail(ErrorKind::InvalidInput, std::string("optimize_pair: flow ") + to_string(config.flow) +
                                      " needs ground-truth depth");
  }

  Problem pb{v, v_prime, config, gt, gt_prime, grid.height(), grid.width(),
             fovy_mask(grid.height(), grid.width(), config.crop_degrees),
             fovy_rows(grid.height(), config.crop_degrees)};
  if (config.flow != FlowSchedule::SelfOnly && (pb.rows.count % 8 || grid.width() % 8)) {
    fail(ErrorKind::InvalidInput, "optimize_pair: cropped size must be divisible by 8 for the gradient loss");
  }

  const double init = config.parameterization == DepthParameterization::Log ? std::log(config.init_depth)
                                                                             : config.init_depth;
  const auto start = [&](const std::optional<Tensor>& map) {
    if (!map) return Tensor::variable(plane, ArrayXd::Constant(grid.size(), init));
    if (map->shape() != plane) fail(ErrorKind::InvalidInput, "optimize_pair: initial depth shape mismatch");
    const ArrayXd& d = map->value();
    if (!d.allFinite() || (d <= 0.0).any()) {
      fail(ErrorKind::InvalidInput, "optimize_pair: initial depth must be finite and positive");
    }
    return Tensor::variable(plane, config.parameterization == DepthParameterization::Log ? ArrayXd(d.log()) : d);
  };
  Tensor latent = start(config.init_depth_map);
  Tensor latent_prime = start(config.init_depth_map_prime);
  MotionVars forward = MotionVars::variable(config.init_motion);
  MotionVars backward = MotionVars::variable(-config.init_motion);
  if (config.motion_model == MotionModel::ForwardOnly) {
    // Only the translation along the heading stays free.
    for (MotionVars* m : {&forward, &backward}) {
      m->dv_y = Tensor::scalar(0.0);
      m->dv_z = Tensor::scalar(0.0);
      m->dr_x = Tensor::scalar(0.0);
    }
  }
  std::vector<Tensor> params{latent, latent_prime};
  for (const MotionVars* m : {&forward, &backward}) {
    for (const Tensor& c : m->components()) {
      if (c.requires_grad()) params.push_back(c);
    }
  }

  Adam adam(config.learning_rate, config.beta1, config.beta2);
  std::mt19937_64 coin(config.seed);
  OptimResult result;

  for (int it = 0; it < config.iterations; ++it) {
    bool self_flow = config.flow == FlowSchedule::SelfOnly;
    if (config.flow == FlowSchedule::JointRandom) {
      self_flow = double(coin() >> 11) * 0x1.0p-53 < config.self_probability;
    }

    Tape tape;
    for (Tensor& p : params) tape.watch(p);
    const Tensor depth = realize_depth(latent, config);
    const Tensor depth_prime = realize_depth(latent_prime, config);
    for (const Tensor* d : {&depth, &depth_prime}) {
      if (!d->value().allFinite() || (d->value() <= 0.0).any()) {
        throw DivergenceError("optimize_pair: depth left the positive finite range at iteration " +
                                  std::to_string(it),
                              result.trace);
      }
    }

    TraceRecord rec;
    rec.iteration = it;
    rec.flow = self_flow ? "self" : "supervised";
    LossTerms terms;
    if (self_flow) {
      const SplatResult v_prime_syn = synthesize_image(v, depth, forward);
      const SplatResult v_syn = synthesize_image(v_prime, depth_prime, backward);
      const SplatResult d_prime_syn = synthesize_depth(depth, forward);
      const SplatResult d_syn = synthesize_depth(depth_prime, backward);
      const Mask mask = v_syn.coverage * pb.crop;
      const Mask mask_prime = v_prime_syn.coverage * pb.crop;
      if (mask.sum() == 0.0 || mask_prime.sum() == 0.0) {
        fail(ErrorKind::DegenerateCoverage, "optimize_pair: no covered pixels inside the crop");
      }
      terms.image = image_consistency(v, v_syn.image, v_prime, v_prime_syn.image, mask, mask_prime,
                                      config.weights.alpha);
      if (config.weights.lambda_depth > 0.0) {
        terms.depth = depth_consistency(depth, d_syn.image, depth_prime, d_prime_syn.image,
                                        d_syn.coverage * pb.crop, d_prime_syn.coverage * pb.crop);
        rec.depth = terms.depth->item();
      }
      terms.pose = pose_consistency(forward, backward);
      rec.image = terms.image->item();
      rec.pose = terms.pose->item();
    } else {
      Tensor supervised = supervised_term(depth, *gt, pb, rec);
      if (gt_prime) supervised = supervised + supervised_term(depth_prime, *gt_prime, pb, rec);
      terms.pixel = supervised;
    }
    const Tensor total = total_loss(terms, config.weights);
    rec.total = total.item();
    result.trace.push_back(rec);
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("optimize_pair: objective became non-finite at iteration " + std::to_string(it),
                            result.trace);
    }
    if (total.tape() == &tape) tape.backward(total);
    adam.step(params);
    if (config.parameterization == DepthParameterization::Linear) {
      latent.mutable_value() = latent.value().max(1e-3);
      latent_prime.mutable_value() = latent_prime.value().max(1e-3);
    }
  }

  result.depth = realize_depth(latent, config).clone();
  result.depth_prime = realize_depth(latent_prime, config).clone();
  result.forward = forward.value();
  result.backward = backward.value();
  return result;
}

}  // namespace sphdepth
