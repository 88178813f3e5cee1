#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sphdepth/error.hpp"

namespace sphdepth {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

namespace detail {
struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until something flows into it
  bool requires_grad = false;
  Tape* tape = nullptr;
};
}  // namespace detail

/// Dense row-major float64 array that may take part in a gradient tape.
///
/// Copies share storage (handle semantics); `clone()` makes an independent
/// constant copy. Values are stored flat; multi-dimensional views are up to
/// the ops.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Eigen::ArrayXd values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// A leaf that will receive gradients once watched by a tape.
  static Tensor variable(Shape shape, Eigen::ArrayXd values);

  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->value.size(); }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }

  const Eigen::ArrayXd& value() const { return node_->value; }
  /// In-place access for optimizer updates of leaves. Invalidates nothing on
  /// the tape but must not be used on recorded intermediates.
  Eigen::ArrayXd& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Accumulated gradient; zeros if nothing has flowed in yet.
  Eigen::ArrayXd grad() const;
  void zero_grad() { node_->grad.resize(0); }

  Tape* tape() const { return node_->tape; }
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend class Tape;
  friend Tensor make_result(Shape, Eigen::ArrayXd, std::initializer_list<const Tensor*>,
                            std::function<void(const Eigen::ArrayXd&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Records operations in execution order and replays them backwards.
///
/// Leaves join a tape through `watch` and are unbound again when the tape is
/// destroyed. A tape belongs to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Marks `leaf` as requiring gradients and binds it to this tape.
  Tensor watch(const Tensor& leaf);

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every watched
  /// leaf. `loss` must be a scalar produced on this tape.
  void backward(const Tensor& loss);

  /// Drops recorded operations; watched leaves stay bound.
  void clear();
  std::size_t size() const { return records_.size(); }

  struct Record {
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    std::function<void(const Eigen::ArrayXd&)> backward;
  };

 private:
  friend Tensor make_result(Shape, Eigen::ArrayXd, std::initializer_list<const Tensor*>,
                            std::function<void(const Eigen::ArrayXd&)>);
  std::vector<Record> records_;
  std::vector<std::shared_ptr<detail::Node>> leaves_;
};

/// Builds an op output and, when any input requires gradients, records
/// `backward` (which receives d(loss)/d(output)) on the shared tape.
Tensor make_result(Shape shape, Eigen::ArrayXd value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const Eigen::ArrayXd&)> backward);

/// Adds `g` into the gradient buffer of `t` when it requires gradients.
void accumulate(const Tensor& t, const Eigen::ArrayXd& g);

// Elementwise arithmetic. Operands broadcast when shapes are equal, when one
// side has a single element, or when one side is [1, ...rest] and the other
// [C, ...rest].
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator/(double a, const Tensor& b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor square(const Tensor& x);
Tensor atan2(const Tensor& y, const Tensor& x);
/// Gradient passes where lo <= x <= hi, zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

inline constexpr double kSmoothAbsEps = 1e-6;
/// sqrt(x^2 + eps^2) - eps: differentiable everywhere, exactly 0 at 0.
Tensor smooth_abs(const Tensor& x, double eps = kSmoothAbsEps);
/// Angle wrapped into [0, 2pi); unit gradient.
Tensor wrap_angle(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
/// weight [Cout, Cin] applied per pixel to x [Cin, H, W].
Tensor conv1x1(const Tensor& weight, const Tensor& x);
/// Row-wise softmax of a 2-D tensor with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Scatters each pixel of `values` [C, H, W] to continuous target position
/// (px, py) with bilinear weights. Columns wrap around, rows clamp to
/// [0, H-1]. px, py hold H*W elements.
Tensor bilinear_splat(const Tensor& values, const Tensor& px, const Tensor& py);
/// Samples `image` [C, H, W] at (px, py) using the same wrap/clamp
/// conventions. px and py share a shape; [H', W'] or [1, H', W'] gives
/// [C, H', W'], anything else [C, N].
Tensor bilinear_gather(const Tensor& image, const Tensor& px, const Tensor& py);
/// 2x2 average pooling over the last two axes.
Tensor avg_pool2(const Tensor& x);

/// Rows [first, first + count) of x [C, H, W].
Tensor slice_rows(const Tensor& x, Index first, Index count);
/// 3x3 mean filter on [C, H, W]: columns wrap, rows reflect.
Tensor box_filter3(const Tensor& x);
/// Forward differences along columns ([C, H, W-1]) and rows ([C, H-1, W]).
Tensor diff_x(const Tensor& x);
Tensor diff_y(const Tensor& x);

/// Result of comparing tape gradients against central differences.
struct GradCheckReport {
  std::vector<double> max_rel_error;  // one per input
  double worst = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double abs_floor = 1e-7;
};

/// `f` maps the inputs to a scalar. Inputs are copied into fresh leaves;
/// the originals are not modified. Per-element error is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor / tolerance),
/// so differences below `abs_floor` always pass.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, GradCheckOptions options = {});

}  // namespace sphdepth
