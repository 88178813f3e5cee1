#include "sphdepth/gradsuite.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "sphdepth/losses.hpp"
#include "sphdepth/nonlocal.hpp"
#include "sphdepth/warp.hpp"

namespace sphdepth {

namespace {

using Eigen::ArrayXd;
using Inputs = std::vector<Tensor>;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Tensor uniform(const Shape& shape, double lo, double hi) {
    ArrayXd v(numel(shape));
    for (double& x : v) x = uniform(lo, hi);
    return Tensor(shape, v);
  }

  // Magnitude in [lo, hi] with a random sign.
  Tensor signed_magnitude(const Shape& shape, double lo, double hi) {
    ArrayXd v(numel(shape));
    for (double& x : v) x = (uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) * uniform(lo, hi);
    return Tensor(shape, v);
  }

  // Continuous coordinates whose fractional part stays away from the
  // bilinear kinks at integers.
  Tensor off_grid(const Shape& shape, int lo, int hi) {
    ArrayXd v(numel(shape));
    for (double& x : v) x = double(std::uniform_int_distribution<int>(lo, hi)(rng_)) + uniform(0.1, 0.9);
    return Tensor(shape, v);
  }

 private:
  std::mt19937_64 rng_;
};

// Reduces an arbitrary output to a scalar with fixed random weights so that
// gradients are not degenerate (plain sums kill e.g. the softmax gradient).
Tensor project(const Tensor& out, std::uint64_t seed) {
  Sampler s(seed ^ 0x5DEECE66Dull);
  return sum(out * s.uniform(out.shape(), -1.0, 1.0));
}

GradCase unary_case(std::string name, Tensor (*op)(const Tensor&), double lo, double hi, bool both_signs = false) {
  return {name, [=](std::uint64_t seed, const GradCheckOptions& opt) {
            Sampler s(seed);
            const Shape shape{2, 4, 6};
            Tensor x = both_signs ? s.signed_magnitude(shape, lo, hi) : s.uniform(shape, lo, hi);
            return grad_check([&](const Inputs& in) { return project(op(in[0]), seed); }, {x}, opt);
          }};
}

GradCase binary_case(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op, Shape sa, Shape sb,
                     double lo_b = -1.0, double hi_b = 1.0) {
  return {name, [=](std::uint64_t seed, const GradCheckOptions& opt) {
            Sampler s(seed);
            Tensor a = s.uniform(sa, -1.0, 1.0);
            Tensor b = s.uniform(sb, lo_b, hi_b);
            return grad_check([&](const Inputs& in) { return project(op(in[0], in[1]), seed); }, {a, b}, opt);
          }};
}

Tensor faulty_sin(const Tensor& x) {
  const ArrayXd v = x.value();
  return make_result(x.shape(), v.sin(), {&x}, [x, v](const ArrayXd& g) {
    ArrayXd d = v.cos();
    for (Index i = 0; i < d.size(); i += 2) d[i] = -d[i];
    accumulate(x, g * d);
  });
}

// Every projected coordinate at least `margin` away from an integer.
bool generic_position(const WarpField& f, Index h, Index w, double margin) {
  const auto ok = [margin](double p) {
    const double frac = p - std::floor(p);
    return frac > margin && frac < 1.0 - margin;
  };
  for (Index i = 0; i < f.theta.numel(); ++i) {
    const double px = f.theta.value()[i] * double(w) / kTwoPi<double> - 0.5;
    const double py = f.phi.value()[i] * double(h) / std::numbers::pi - 0.5;
    if (!ok(px) || !ok(py)) return false;
  }
  return true;
}

CameraMotion random_motion(Sampler& s) {
  return {Eigen::Vector3d(s.uniform(0.08, 0.15), s.uniform(-0.05, 0.05), s.uniform(-0.05, 0.05)),
          s.uniform(-0.08, 0.08)};
}

// Smallest |x| over every argument the objective hands to a smoothed
// absolute value. Central differences are unreliable within a few steps of
// that kink, so random instances are redrawn until it is well clear.
double kink_clearance(std::initializer_list<Tensor> residuals) {
  double m = std::numeric_limits<double>::infinity();
  for (const Tensor& r : residuals) m = std::min(m, r.value().abs().minCoeff());
  return m;
}

constexpr double kPositionMargin = 2e-3;
constexpr double kKinkMargin = 3e-4;

// A random pair in generic position: no bilinear kinks and no residual near
// zero at the base point. Single-channel images keep the redraw rate low.
struct CompositeInstance {
  Tensor v, v_prime, d, d_prime, gt;
  CameraMotion fwd, bwd;
  ArrayXd valid;
  AlignedDepth fit;
};

CompositeInstance draw_composite(std::uint64_t seed, Index h, Index w, Index channels, bool supervised) {
  Sampler s(seed);
  const PixelGrid grid(h, w);
  CompositeInstance in;
  in.valid = ArrayXd::Ones(h * w);
  if (supervised) in.valid[5] = in.valid[h * w / 3] = in.valid[h * w - 3] = 0.0;
  for (;;) {
    in.v = s.uniform({channels, h, w}, 0.0, 1.0);
    in.v_prime = s.uniform({channels, h, w}, 0.0, 1.0);
    in.fwd = random_motion(s);
    in.bwd = -in.fwd;
    for (int k = 0; k < 3; ++k) in.bwd.dv[k] += s.signed_magnitude({}, 0.01, 0.03).item();
    in.bwd.dr_x += s.signed_magnitude({}, 0.01, 0.03).item();
    in.d = s.uniform({1, h, w}, 0.4, 0.9);
    in.d_prime = s.uniform({1, h, w}, 0.4, 0.9);
    in.gt = s.uniform({1, h, w}, 0.3, 1.0);
    in.gt.mutable_value() *= in.valid;
    if (!generic_position(reproject(in.d, grid, in.fwd), h, w, kPositionMargin) ||
        !generic_position(reproject(in.d_prime, grid, in.bwd), h, w, kPositionMargin)) {
      continue;
    }
    const SplatResult vp_syn = synthesize_image(in.v, in.d, in.fwd);
    const SplatResult v_syn = synthesize_image(in.v_prime, in.d_prime, in.bwd);
    double clearance = kink_clearance({vp_syn.image - in.v_prime, v_syn.image - in.v,
                                       ssim(in.v, v_syn.image) - 1.0, ssim(in.v_prime, vp_syn.image) - 1.0});
    if (supervised) {
      const SplatResult dp_syn = synthesize_depth(in.d, in.fwd);
      const SplatResult d_syn = synthesize_depth(in.d_prime, in.bwd);
      in.fit = align_scale_shift(in.d, in.gt, in.valid);
      Tensor r = in.d * in.fit.scale + in.fit.shift - in.gt;
      clearance = std::min(clearance, kink_clearance({dp_syn.image - in.d_prime, d_syn.image - in.d, r}));
      for (int scale = 0; scale < 4; ++scale) {
        clearance = std::min(clearance, kink_clearance({diff_x(r)}));
        if (r.dim(1) > 1) clearance = std::min(clearance, kink_clearance({diff_y(r)}));
        if (scale < 3) r = avg_pool2(r);
      }
    }
    if (clearance > kKinkMargin) return in;
  }
}

GradCheckReport check_total_loss(std::uint64_t seed, const GradCheckOptions& opt) {
  // Eight rows is the smallest height the four-scale gradient loss accepts.
  const CompositeInstance c = draw_composite(seed, 8, 16, 1, true);
  const LossWeights weights;
  const auto objective = [&](const Inputs& in) {
    const MotionVars mf{in[2], in[3], in[4], in[5]};
    const MotionVars mb{in[6], in[7], in[8], in[9]};
    const SplatResult vp_syn = synthesize_image(c.v, in[0], mf);
    const SplatResult v_syn = synthesize_image(c.v_prime, in[1], mb);
    const SplatResult dp_syn = synthesize_depth(in[0], mf);
    const SplatResult d_syn = synthesize_depth(in[1], mb);
    LossTerms t;
    t.image = image_consistency(c.v, v_syn.image, c.v_prime, vp_syn.image, v_syn.coverage, vp_syn.coverage,
                                weights.alpha);
    t.depth = depth_consistency(in[0], d_syn.image, in[1], dp_syn.image, d_syn.coverage, dp_syn.coverage);
    t.pose = pose_consistency(mf, mb);
    // The alignment is a constant of the objective, fitted once up front.
    const Tensor aligned = in[0] * c.fit.scale + c.fit.shift;
    t.pixel = pixel_loss(aligned, c.gt, c.valid);
    t.gradient = gradient_loss(aligned, c.gt, c.valid);
    return total_loss(t, weights);
  };
  // On eight rows most pixels sit close to a pole, where the warp bends
  // sharply with the motion; the truncation error of central differences
  // grows with step^2, so this case probes with a finer step.
  GradCheckOptions fine = opt;
  fine.step = std::min(opt.step, 1e-6);
  const auto scalar = [](double x) { return Tensor::scalar(x); };
  return grad_check(objective, {c.d, c.d_prime, scalar(c.fwd.dv.x()), scalar(c.fwd.dv.y()), scalar(c.fwd.dv.z()),
                                scalar(c.fwd.dr_x), scalar(c.bwd.dv.x()), scalar(c.bwd.dv.y()),
                                scalar(c.bwd.dv.z()), scalar(c.bwd.dr_x)}, fine);
}

GradCheckReport check_image_consistency(std::uint64_t seed, const GradCheckOptions& opt) {
  const CompositeInstance c = draw_composite(seed, 4, 8, 3, false);
  const auto objective = [&](const Inputs& in) {
    const MotionVars mf{in[2], in[3], in[4], in[5]};
    const MotionVars mb{in[6], in[7], in[8], in[9]};
    const SplatResult vp_syn = synthesize_image(c.v, in[0], mf);
    const SplatResult v_syn = synthesize_image(c.v_prime, in[1], mb);
    return image_consistency(c.v, v_syn.image, c.v_prime, vp_syn.image, v_syn.coverage, vp_syn.coverage, 0.15);
  };
  const auto scalar = [](double x) { return Tensor::scalar(x); };
  return grad_check(objective, {c.d, c.d_prime, scalar(c.fwd.dv.x()), scalar(c.fwd.dv.y()), scalar(c.fwd.dv.z()),
                                scalar(c.fwd.dr_x), scalar(c.bwd.dv.x()), scalar(c.bwd.dv.y()),
                                scalar(c.bwd.dv.z()), scalar(c.bwd.dr_x)}, opt);
}

GradCheckReport check_non_local(std::uint64_t seed, const GradCheckOptions& opt) {
  Sampler s(seed);
  const Tensor features = s.uniform({4, 3, 4}, -1.0, 1.0);
  const NonLocalWeights w = NonLocalWeights::random(4, seed);
  const NonLocalParams p0 = NonLocalParams::constant(w);
  return grad_check(
      [&](const Inputs& in) {
        const NonLocalParams p{in[1], in[2], in[3], in[4]};
        return project(non_local_forward(in[0], p), seed);
      },
      {features, p0.theta, p0.phi, p0.g, p0.z}, opt);
}

std::vector<GradCase> build_suite() {
  std::vector<GradCase> c;
  const Shape s3{2, 3, 4};
  c.push_back(binary_case("add", [](const Tensor& a, const Tensor& b) { return a + b; }, s3, s3));
  c.push_back(binary_case("add_broadcast", [](const Tensor& a, const Tensor& b) { return a + b; }, s3, {1, 3, 4}));
  c.push_back(binary_case("sub", [](const Tensor& a, const Tensor& b) { return a - b; }, s3, s3));
  c.push_back(binary_case("mul", [](const Tensor& a, const Tensor& b) { return a * b; }, s3, s3));
  c.push_back(binary_case("mul_scalar", [](const Tensor& a, const Tensor& b) { return a * b; }, s3, {}));
  c.push_back(binary_case("div", [](const Tensor& a, const Tensor& b) { return a / b; }, s3, s3, 0.5, 2.0));
  c.push_back(unary_case("neg", [](const Tensor& x) { return -x; }, -1.0, 1.0));
  c.push_back(unary_case("exp", [](const Tensor& x) { return exp(x); }, -1.0, 1.0));
  c.push_back(unary_case("log", [](const Tensor& x) { return log(x); }, 0.3, 2.0));
  c.push_back(unary_case("sqrt", [](const Tensor& x) { return sqrt(x); }, 0.3, 2.0));
  c.push_back(unary_case("sin", [](const Tensor& x) { return sin(x); }, -3.0, 3.0));
  c.push_back(unary_case("cos", [](const Tensor& x) { return cos(x); }, -3.0, 3.0));
  c.push_back(unary_case("square", [](const Tensor& x) { return square(x); }, -1.0, 1.0));
  c.push_back({"atan2", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 // |y| bounded away from 0 keeps clear of the branch cut.
                 Tensor y = s.signed_magnitude({2, 3, 4}, 0.3, 1.0);
                 Tensor x = s.uniform({2, 3, 4}, -1.0, 1.0);
                 return grad_check([&](const Inputs& in) { return project(atan2(in[0], in[1]), seed); }, {y, x}, opt);
               }});
  c.push_back({"clamp", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 Tensor x = s.uniform({2, 3, 4}, -1.0, 1.0);
                 for (double& v : x.mutable_value()) {
                   if (std::abs(std::abs(v) - 0.5) < 0.02) v *= 0.9;
                 }
                 return grad_check([&](const Inputs& in) { return project(clamp(in[0], -0.5, 0.5), seed); }, {x}, opt);
               }});
  c.push_back(unary_case("abs", [](const Tensor& x) { return smooth_abs(x); }, 0.05, 1.0, true));
  c.push_back(unary_case("wrap_angle", [](const Tensor& x) { return wrap_angle(x); }, 0.1, 6.1, true));
  c.push_back(unary_case("sum", [](const Tensor& x) { return sum(x) * sum(x); }, -1.0, 1.0));
  c.push_back(unary_case("mean", [](const Tensor& x) { return mean(x) * mean(x); }, -1.0, 1.0));
  c.push_back(unary_case("reshape", [](const Tensor& x) { return reshape(x, {6, 8}); }, -1.0, 1.0));
  c.push_back({"transpose", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 Tensor x = s.uniform({3, 5}, -1.0, 1.0);
                 return grad_check([&](const Inputs& in) { return project(transpose(in[0]), seed); }, {x}, opt);
               }});
  c.push_back(binary_case("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); }, {3, 4}, {4, 2}));
  c.push_back(
      binary_case("conv1x1", [](const Tensor& a, const Tensor& b) { return conv1x1(a, b); }, {3, 2}, {2, 3, 4}));
  c.push_back({"softmax_rows", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 Tensor x = s.uniform({3, 5}, -2.0, 2.0);
                 return grad_check([&](const Inputs& in) { return project(softmax_rows(in[0]), seed); }, {x}, opt);
               }});
  c.push_back({"bilinear_splat", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 Tensor values = s.uniform({2, 4, 8}, -1.0, 1.0);
                 Tensor px = s.off_grid({32}, -3, 10);  // exercises the column wrap
                 Tensor py = s.off_grid({32}, 0, 2);
                 return grad_check(
                     [&](const Inputs& in) { return project(bilinear_splat(in[0], in[1], in[2]), seed); },
                     {values, px, py}, opt);
               }});
  c.push_back({"bilinear_gather", [](std::uint64_t seed, const GradCheckOptions& opt) {
                 Sampler s(seed);
                 Tensor image = s.uniform({2, 4, 8}, -1.0, 1.0);
                 Tensor px = s.off_grid({3, 5}, -3, 10);
                 Tensor py = s.off_grid({3, 5}, 0, 2);
                 return grad_check(
                     [&](const Inputs& in) { return project(bilinear_gather(in[0], in[1], in[2]), seed); },
                     {image, px, py}, opt);
               }});
  c.push_back(unary_case("avg_pool2", [](const Tensor& x) { return avg_pool2(x); }, -1.0, 1.0));
  c.push_back(unary_case("slice_rows", [](const Tensor& x) { return slice_rows(x, 1, 2); }, -1.0, 1.0));
  c.push_back(unary_case("box_filter3", [](const Tensor& x) { return box_filter3(x); }, -1.0, 1.0));
  c.push_back(unary_case("diff_x", [](const Tensor& x) { return diff_x(x); }, -1.0, 1.0));
  c.push_back(unary_case("diff_y", [](const Tensor& x) { return diff_y(x); }, -1.0, 1.0));
  c.push_back(binary_case("ssim", [](const Tensor& a, const Tensor& b) { return ssim(a, b); }, {2, 4, 6}, {2, 4, 6}));
  c.push_back({"image_consistency", check_image_consistency});
  c.push_back({"total_loss", check_total_loss});
  c.push_back({"non_local", check_non_local});
  return c;
}

}  // namespace

const std::vector<GradCase>& gradient_suite() {
  static const std::vector<GradCase> suite = build_suite();
  return suite;
}

GradCase faulty_case() {
  return unary_case("faulty_sin", faulty_sin, -3.0, 3.0);
}

std::vector<GradCaseSummary> run_gradient_suite(const std::string& only, int instances, bool inject_fault,
                                                const GradCheckOptions& options) {
  if (instances < 1) fail(ErrorKind::InvalidInput, "gradient suite: need at least one instance");
  std::vector<GradCase> cases;
  for (const GradCase& c : gradient_suite()) {
    if (only.empty() || c.name == only) cases.push_back(c);
  }
  if (inject_fault) cases.push_back(faulty_case());
  if (cases.empty()) fail(ErrorKind::InvalidInput, "gradient suite: no op named '" + only + "'");

  std::vector<GradCaseSummary> out;
  for (const GradCase& c : cases) {
    GradCaseSummary summary{c.name, instances, 0.0, true};
    for (int k = 0; k < instances; ++k) {
      const GradCheckReport r = c.run(std::uint64_t(k) + 1, options);
      summary.worst = std::max(summary.worst, r.worst);
      summary.passed = summary.passed && r.passed;
    }
    out.push_back(summary);
  }
  return out;
}

}  // namespace sphdepth
