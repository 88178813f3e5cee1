#include "sphdepth/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <sstream>

namespace sphdepth {

using Eigen::ArrayXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, ArrayXd::Zero(1)) {}

Tensor::Tensor(Shape shape, ArrayXd values) : node_(std::make_shared<detail::Node>()) {
  for (Index d : shape) {
    if (d <= 0) fail(ErrorKind::InvalidInput, "Tensor: non-positive extent in " + to_string(shape));
  }
  if (sphdepth::numel(shape) != values.size()) {
    fail(ErrorKind::InvalidInput, "Tensor: shape " + to_string(shape) + " does not hold " +
                                      std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = sphdepth::numel(shape);
  return Tensor(std::move(shape), ArrayXd::Zero(n));
}

Tensor Tensor::full(Shape shape, double value) {
  const Index n = sphdepth::numel(shape);
  return Tensor(std::move(shape), ArrayXd::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, ArrayXd::Constant(1, value)); }

Tensor Tensor::variable(Shape shape, ArrayXd values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::Usage, "item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

ArrayXd Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return ArrayXd::Zero(numel());
}

Tensor Tensor::clone() const { return Tensor(shape(), value()); }

// ---------------------------------------------------------------------------
// Tape

Tape::~Tape() {
  for (auto& leaf : leaves_) {
    if (leaf->tape == this) leaf->tape = nullptr;
  }
}

Tensor Tape::watch(const Tensor& leaf) {
  auto& node = leaf.node_;
  if (node->tape != nullptr && node->tape != this) {
    fail(ErrorKind::Usage, "watch: tensor already bound to another tape");
  }
  node->requires_grad = true;
  if (node->tape != this) {
    node->tape = this;
    leaves_.push_back(node);
  }
  return leaf;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this || !loss.requires_grad()) {
    fail(ErrorKind::Usage, "backward: tensor is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    fail(ErrorKind::Usage, "backward: loss must be scalar, got " + to_string(loss.shape()));
  }
  for (auto& record : records_) record.output->grad.resize(0);
  accumulate(loss, ArrayXd::Ones(1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.size() == 0) continue;
    it->backward(it->output->grad);
  }
}

void Tape::clear() { records_.clear(); }

void accumulate(const Tensor& t, const ArrayXd& g) {
  auto& node = *t.node();
  if (!node.requires_grad || node.tape == nullptr) return;
  assert(g.size() == node.value.size());
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

Tensor make_result(Shape shape, ArrayXd value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const ArrayXd&)> backward) {
#ifndef NDEBUG
  assert(value.allFinite() && "non-finite value produced by a tensor op");
#endif
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    Tape* t = in->node()->requires_grad ? in->node()->tape : nullptr;
    if (t == nullptr) continue;
    if (tape != nullptr && tape != t) fail(ErrorKind::Usage, "op mixes tensors from two tapes");
    tape = t;
  }
  Tensor out(std::move(shape), std::move(value));
  if (tape != nullptr) {
    out.node_->requires_grad = true;
    out.node_->tape = tape;
    Tape::Record record;
    for (const Tensor* in : inputs) record.inputs.push_back(in->node());
    record.output = out.node_;
    record.backward = std::move(backward);
    tape->records_.push_back(std::move(record));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

enum class Broadcast { Same, LeftScalar, RightScalar, LeftChannel, RightChannel };

struct BroadcastPlan {
  Broadcast mode;
  Shape shape;
  Index plane = 1;
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {Broadcast::Same, a.shape()};
  if (b.numel() == 1) return {Broadcast::RightScalar, a.shape()};
  if (a.numel() == 1) return {Broadcast::LeftScalar, b.shape()};
  if (a.rank() == b.rank() && a.rank() >= 2 &&
      std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    const Index plane = a.numel() / a.dim(0);
    if (a.dim(0) == 1) return {Broadcast::LeftChannel, b.shape(), plane};
    if (b.dim(0) == 1) return {Broadcast::RightChannel, a.shape(), plane};
  }
  fail(ErrorKind::InvalidInput, std::string(op) + ": incompatible shapes " + to_string(a.shape()) +
                                    " and " + to_string(b.shape()));
}

ArrayXd expand(const Tensor& t, Index n, bool scalar, bool channel, Index plane) {
  if (scalar) return ArrayXd::Constant(n, t.value()[0]);
  if (channel) return t.value().replicate(n / plane, 1);
  return t.value();
}

ArrayXd reduce(const ArrayXd& g, const Tensor& t, bool scalar, bool channel, Index plane) {
  if (scalar) return ArrayXd::Constant(1, g.sum());
  if (channel) {
    ArrayXd out = ArrayXd::Zero(plane);
    for (Index c = 0; c < g.size() / plane; ++c) out += g.segment(c * plane, plane);
    return out;
  }
  (void)t;
  return g;
}

// f(x, y) -> value, dfdx(x, y, out), dfdy(x, y, out)
template <class F, class DX, class DY>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DX dfdx, DY dfdy) {
  const BroadcastPlan plan = plan_broadcast(a, b, name);
  const Index n = numel(plan.shape);
  const bool a_scalar = plan.mode == Broadcast::LeftScalar;
  const bool b_scalar = plan.mode == Broadcast::RightScalar;
  const bool a_chan = plan.mode == Broadcast::LeftChannel;
  const bool b_chan = plan.mode == Broadcast::RightChannel;
  ArrayXd x = expand(a, n, a_scalar, a_chan, plan.plane);
  ArrayXd y = expand(b, n, b_scalar, b_chan, plan.plane);
  ArrayXd out = f(x, y);
  return make_result(plan.shape, out, {&a, &b},
                     [=](const ArrayXd& g) {
                       if (a.requires_grad()) {
                         accumulate(a, reduce(g * dfdx(x, y, out), a, a_scalar, a_chan, plan.plane));
                       }
                       if (b.requires_grad()) {
                         accumulate(b, reduce(g * dfdy(x, y, out), b, b_scalar, b_chan, plan.plane));
                       }
                     });
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  ArrayXd in = x.value();
  ArrayXd out = f(in);
  return make_result(x.shape(), out, {&x},
                     [=](const ArrayXd& g) { accumulate(x, g * df(in, out)); });
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x + y; },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd&) -> ArrayXd { return ArrayXd::Ones(x.size()); },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd&) -> ArrayXd { return ArrayXd::Ones(x.size()); });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x - y; },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd&) -> ArrayXd { return ArrayXd::Ones(x.size()); },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd&) -> ArrayXd {
        return ArrayXd::Constant(x.size(), -1.0);
      });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x * y; },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd&) -> ArrayXd { return y; },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd&) -> ArrayXd { return x; });
}

Tensor operator/(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x / y; },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd&) -> ArrayXd { return y.inverse(); },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& out) -> ArrayXd { return -out / y; });
}

Tensor operator-(const Tensor& a) {
  return unary(
      a, [](const ArrayXd& x) -> ArrayXd { return -x; },
      [](const ArrayXd& x, const ArrayXd&) -> ArrayXd { return ArrayXd::Constant(x.size(), -1.0); });
}

Tensor operator+(const Tensor& a, double b) { return a + Tensor::scalar(b); }
Tensor operator+(double a, const Tensor& b) { return Tensor::scalar(a) + b; }
Tensor operator-(const Tensor& a, double b) { return a - Tensor::scalar(b); }
Tensor operator-(double a, const Tensor& b) { return Tensor::scalar(a) - b; }
Tensor operator*(const Tensor& a, double b) { return a * Tensor::scalar(b); }
Tensor operator*(double a, const Tensor& b) { return Tensor::scalar(a) * b; }
Tensor operator/(const Tensor& a, double b) { return a / Tensor::scalar(b); }
Tensor operator/(double a, const Tensor& b) { return Tensor::scalar(a) / b; }

Tensor exp(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.exp(); },
      [](const ArrayXd&, const ArrayXd& out) -> ArrayXd { return out; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.log(); },
      [](const ArrayXd& v, const ArrayXd&) -> ArrayXd { return v.inverse(); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.sqrt(); },
      [](const ArrayXd&, const ArrayXd& out) -> ArrayXd { return 0.5 / out; });
}

Tensor sin(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.sin(); },
      [](const ArrayXd& v, const ArrayXd&) -> ArrayXd { return v.cos(); });
}

Tensor cos(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.cos(); },
      [](const ArrayXd& v, const ArrayXd&) -> ArrayXd { return -v.sin(); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](const ArrayXd& v) -> ArrayXd { return v.square(); },
      [](const ArrayXd& v, const ArrayXd&) -> ArrayXd { return 2.0 * v; });
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  return binary(
      y, x, "atan2",
      [](const ArrayXd& yv, const ArrayXd& xv) -> ArrayXd { return yv.binaryExpr(xv, [](double a, double b) { return std::atan2(a, b); }); },
      [](const ArrayXd& yv, const ArrayXd& xv, const ArrayXd&) -> ArrayXd {
        return xv / (xv.square() + yv.square());
      },
      [](const ArrayXd& yv, const ArrayXd& xv, const ArrayXd&) -> ArrayXd {
        return -yv / (xv.square() + yv.square());
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) fail(ErrorKind::InvalidInput, "clamp: lo must not exceed hi");
  return unary(
      x, [=](const ArrayXd& v) -> ArrayXd { return v.max(lo).min(hi); },
      [=](const ArrayXd& v, const ArrayXd&) -> ArrayXd {
        return ((v >= lo) && (v <= hi)).cast<double>();
      });
}

Tensor smooth_abs(const Tensor& x, double eps) {
  return unary(
      x, [=](const ArrayXd& v) -> ArrayXd { return (v.square() + eps * eps).sqrt() - eps; },
      [=](const ArrayXd& v, const ArrayXd& out) -> ArrayXd { return v / (out + eps); });
}

Tensor wrap_angle(const Tensor& x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return unary(
      x,
      [](const ArrayXd& v) -> ArrayXd {
        return v.unaryExpr([](double a) {
          double w = a - two_pi * std::floor(a / two_pi);
          return w >= two_pi ? 0.0 : w;
        });
      },
      [](const ArrayXd& v, const ArrayXd&) -> ArrayXd { return ArrayXd::Ones(v.size()); });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor sum(const Tensor& x) {
  const Index n = x.numel();
  return make_result(Shape{}, ArrayXd::Constant(1, x.value().sum()), {&x},
                     [=](const ArrayXd& g) { accumulate(x, ArrayXd::Constant(n, g[0])); });
}

Tensor mean(const Tensor& x) {
  const Index n = x.numel();
  return make_result(Shape{}, ArrayXd::Constant(1, x.value().mean()), {&x},
                     [=](const ArrayXd& g) { accumulate(x, ArrayXd::Constant(n, g[0] / double(n))); });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail(ErrorKind::InvalidInput, "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_result(std::move(shape), x.value(), {&x}, [=](const ArrayXd& g) { accumulate(x, g); });
}

namespace {
void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": expected rank " + std::to_string(rank) +
                                      ", got " + to_string(t.shape()));
  }
}

ArrayXd flat(const RowMajorMatrix& m) { return Eigen::Map<const ArrayXd>(m.data(), m.size()); }
}  // namespace

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const Index r = x.dim(0), c = x.dim(1);
  RowMajorMatrix t = ConstMatrixMap(x.value().data(), r, c).transpose();
  return make_result({c, r}, flat(t), {&x}, [=](const ArrayXd& g) {
    RowMajorMatrix gt = ConstMatrixMap(g.data(), c, r).transpose();
    accumulate(x, flat(gt));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::InvalidInput,
         "matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  RowMajorMatrix out = ConstMatrixMap(a.value().data(), n, k) * ConstMatrixMap(b.value().data(), k, m);
  return make_result({n, m}, flat(out), {&a, &b}, [=](const ArrayXd& g) {
    ConstMatrixMap G(g.data(), n, m);
    if (a.requires_grad()) {
      RowMajorMatrix ga = G * ConstMatrixMap(b.value().data(), k, m).transpose();
      accumulate(a, flat(ga));
    }
    if (b.requires_grad()) {
      RowMajorMatrix gb = ConstMatrixMap(a.value().data(), n, k).transpose() * G;
      accumulate(b, flat(gb));
    }
  });
}

Tensor conv1x1(const Tensor& weight, const Tensor& x) {
  require_rank(weight, 2, "conv1x1");
  require_rank(x, 3, "conv1x1");
  const Index cout = weight.dim(0), cin = weight.dim(1);
  if (x.dim(0) != cin) {
    fail(ErrorKind::InvalidInput, "conv1x1: weight " + to_string(weight.shape()) +
                                      " does not match input " + to_string(x.shape()));
  }
  const Index hw = x.dim(1) * x.dim(2);
  RowMajorMatrix out =
      ConstMatrixMap(weight.value().data(), cout, cin) * ConstMatrixMap(x.value().data(), cin, hw);
  return make_result({cout, x.dim(1), x.dim(2)}, flat(out), {&weight, &x}, [=](const ArrayXd& g) {
    ConstMatrixMap G(g.data(), cout, hw);
    if (weight.requires_grad()) {
      RowMajorMatrix gw = G * ConstMatrixMap(x.value().data(), cin, hw).transpose();
      accumulate(weight, flat(gw));
    }
    if (x.requires_grad()) {
      RowMajorMatrix gx = ConstMatrixMap(weight.value().data(), cout, cin).transpose() * G;
      accumulate(x, flat(gx));
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const Index n = x.dim(0), m = x.dim(1);
  ConstMatrixMap in(x.value().data(), n, m);
  RowMajorMatrix y = (in.colwise() - in.rowwise().maxCoeff()).array().exp().matrix();
  y = (y.array().colwise() / y.rowwise().sum().array()).matrix();
  return make_result({n, m}, flat(y), {&x}, [=](const ArrayXd& g) {
    ConstMatrixMap G(g.data(), n, m);
    Eigen::VectorXd dots = (G.array() * y.array()).rowwise().sum();
    RowMajorMatrix gx = (y.array() * (G.colwise() - dots).array()).matrix();
    accumulate(x, flat(gx));
  });
}

// ---------------------------------------------------------------------------
// Bilinear resampling on the equirectangular grid

namespace {

struct Bilinear {
  Index col0, col1, row0, row1;
  double fx, fy;
  bool row_inside;

  // Corner order: (row0,col0), (row0,col1), (row1,col0), (row1,col1).
  std::array<Index, 4> offsets(Index width) const {
    return {row0 * width + col0, row0 * width + col1, row1 * width + col0, row1 * width + col1};
  }
  std::array<double, 4> weights() const {
    return {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  }
  std::array<double, 4> d_dx() const { return {-(1 - fy), 1 - fy, -fy, fy}; }
  std::array<double, 4> d_dy() const {
    if (!row_inside) return {0, 0, 0, 0};
    return {-(1 - fx), -fx, 1 - fx, fx};
  }
};

Bilinear locate(double x, double y, Index height, Index width) {
  Bilinear b;
  const double max_row = double(height - 1);
  b.row_inside = y >= 0.0 && y <= max_row;
  const double yc = std::clamp(y, 0.0, max_row);
  b.row0 = std::min<Index>(Index(std::floor(yc)), height - 2);
  b.row1 = b.row0 + 1;
  b.fy = yc - double(b.row0);
  const double x0 = std::floor(x);
  b.fx = x - x0;
  Index c = Index(std::fmod(x0, double(width)));
  if (c < 0) c += width;
  b.col0 = c;
  b.col1 = (c + 1) % width;
  return b;
}

void check_coords(const Tensor& px, const Tensor& py, Index expected, const char* op) {
  if (px.shape() != py.shape()) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": px and py shapes differ");
  }
  if (expected >= 0 && px.numel() != expected) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": expected " + std::to_string(expected) +
                                      " coordinates, got " + std::to_string(px.numel()));
  }
  if (!px.value().allFinite() || !py.value().allFinite()) {
    fail(ErrorKind::InvalidInput, std::string(op) + ": non-finite coordinates");
  }
}

}  // namespace

Tensor bilinear_splat(const Tensor& values, const Tensor& px, const Tensor& py) {
  require_rank(values, 3, "bilinear_splat");
  const Index channels = values.dim(0), height = values.dim(1), width = values.dim(2);
  const Index plane = height * width;
  if (height < 2) fail(ErrorKind::InvalidInput, "bilinear_splat: height must be >= 2");
  check_coords(px, py, plane, "bilinear_splat");

  std::vector<Bilinear> taps(plane);
  ArrayXd out = ArrayXd::Zero(channels * plane);
  for (Index s = 0; s < plane; ++s) {
    taps[s] = locate(px.value()[s], py.value()[s], height, width);
    const auto off = taps[s].offsets(width);
    const auto w = taps[s].weights();
    for (Index c = 0; c < channels; ++c) {
      const double v = values.value()[c * plane + s];
      for (int k = 0; k < 4; ++k) out[c * plane + off[k]] += w[k] * v;
    }
  }
  return make_result(values.shape(), out, {&values, &px, &py}, [=](const ArrayXd& g) {
    ArrayXd gv = ArrayXd::Zero(channels * plane);
    ArrayXd gx = ArrayXd::Zero(plane);
    ArrayXd gy = ArrayXd::Zero(plane);
    for (Index s = 0; s < plane; ++s) {
      const auto off = taps[s].offsets(width);
      const auto w = taps[s].weights();
      const auto wx = taps[s].d_dx();
      const auto wy = taps[s].d_dy();
      for (Index c = 0; c < channels; ++c) {
        const double v = values.value()[c * plane + s];
        for (int k = 0; k < 4; ++k) {
          const double go = g[c * plane + off[k]];
          gv[c * plane + s] += w[k] * go;
          gx[s] += v * wx[k] * go;
          gy[s] += v * wy[k] * go;
        }
      }
    }
    if (values.requires_grad()) accumulate(values, gv);
    if (px.requires_grad()) accumulate(px, gx);
    if (py.requires_grad()) accumulate(py, gy);
  });
}

Tensor bilinear_gather(const Tensor& image, const Tensor& px, const Tensor& py) {
  require_rank(image, 3, "bilinear_gather");
  const Index channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  const Index plane = height * width;
  if (height < 2) fail(ErrorKind::InvalidInput, "bilinear_gather: height must be >= 2");
  check_coords(px, py, -1, "bilinear_gather");
  const Index count = px.numel();

  Shape shape{channels};
  if (px.rank() == 2) {
    shape.insert(shape.end(), px.shape().begin(), px.shape().end());
  } else if (px.rank() == 3 && px.dim(0) == 1) {
    shape.insert(shape.end(), px.shape().begin() + 1, px.shape().end());
  } else {
    shape.push_back(count);
  }

  std::vector<Bilinear> taps(count);
  ArrayXd out = ArrayXd::Zero(channels * count);
  for (Index n = 0; n < count; ++n) {
    taps[n] = locate(px.value()[n], py.value()[n], height, width);
    const auto off = taps[n].offsets(width);
    const auto w = taps[n].weights();
    for (Index c = 0; c < channels; ++c) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += w[k] * image.value()[c * plane + off[k]];
      out[c * count + n] = acc;
    }
  }
  return make_result(shape, out, {&image, &px, &py}, [=](const ArrayXd& g) {
    ArrayXd gi = ArrayXd::Zero(channels * plane);
    ArrayXd gx = ArrayXd::Zero(count);
    ArrayXd gy = ArrayXd::Zero(count);
    for (Index n = 0; n < count; ++n) {
      const auto off = taps[n].offsets(width);
      const auto w = taps[n].weights();
      const auto wx = taps[n].d_dx();
      const auto wy = taps[n].d_dy();
      for (Index c = 0; c < channels; ++c) {
        const double go = g[c * count + n];
        for (int k = 0; k < 4; ++k) {
          const double v = image.value()[c * plane + off[k]];
          gi[c * plane + off[k]] += w[k] * go;
          gx[n] += wx[k] * v * go;
          gy[n] += wy[k] * v * go;
        }
      }
    }
    if (image.requires_grad()) accumulate(image, gi);
    if (px.requires_grad()) accumulate(px, gx);
    if (py.requires_grad()) accumulate(py, gy);
  });
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() < 2) fail(ErrorKind::InvalidInput, "avg_pool2: need at least 2 axes");
  const Index height = x.dim(x.rank() - 2), width = x.dim(x.rank() - 1);
  if (height % 2 || width % 2) {
    fail(ErrorKind::InvalidInput, "avg_pool2: spatial size must be even, got " + to_string(x.shape()));
  }
  const Index lead = x.numel() / (height * width);
  const Index oh = height / 2, ow = width / 2;
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  ArrayXd out(lead * oh * ow);
  const ArrayXd& v = x.value();
  for (Index l = 0; l < lead; ++l) {
    for (Index r = 0; r < oh; ++r) {
      for (Index c = 0; c < ow; ++c) {
        const Index base = l * height * width + 2 * r * width + 2 * c;
        out[(l * oh + r) * ow + c] = 0.25 * (v[base] + v[base + 1] + v[base + width] + v[base + width + 1]);
      }
    }
  }
  return make_result(shape, out, {&x}, [=](const ArrayXd& g) {
    ArrayXd gx(lead * height * width);
    for (Index l = 0; l < lead; ++l) {
      for (Index r = 0; r < height; ++r) {
        for (Index c = 0; c < width; ++c) {
          gx[(l * height + r) * width + c] = 0.25 * g[(l * oh + r / 2) * ow + c / 2];
        }
      }
    }
    accumulate(x, gx);
  });
}

Tensor slice_rows(const Tensor& x, Index first, Index count) {
  require_rank(x, 3, "slice_rows");
  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  if (first < 0 || count <= 0 || first + count > height) {
    fail(ErrorKind::InvalidInput, "slice_rows: rows [" + std::to_string(first) + ", " +
                                      std::to_string(first + count) + ") outside height " +
                                      std::to_string(height));
  }
  ArrayXd out(channels * count * width);
  for (Index c = 0; c < channels; ++c) {
    out.segment(c * count * width, count * width) =
        x.value().segment((c * height + first) * width, count * width);
  }
  return make_result({channels, count, width}, out, {&x}, [=](const ArrayXd& g) {
    ArrayXd gx = ArrayXd::Zero(x.numel());
    for (Index c = 0; c < channels; ++c) {
      gx.segment((c * height + first) * width, count * width) = g.segment(c * count * width, count * width);
    }
    accumulate(x, gx);
  });
}

Tensor box_filter3(const Tensor& x) {
  require_rank(x, 3, "box_filter3");
  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  if (height < 2) fail(ErrorKind::InvalidInput, "box_filter3: height must be >= 2");
  auto reflect = [height](Index r) { return r < 0 ? -r : (r >= height ? 2 * height - 2 - r : r); };
  auto wrap = [width](Index c) { return (c + width) % width; };

  // Same neighbour table serves forward (gather) and backward (scatter).
  auto for_each_tap = [=](auto&& visit) {
    for (Index ch = 0; ch < channels; ++ch) {
      for (Index r = 0; r < height; ++r) {
        for (Index c = 0; c < width; ++c) {
          const Index out = (ch * height + r) * width + c;
          for (Index dr = -1; dr <= 1; ++dr) {
            for (Index dc = -1; dc <= 1; ++dc) {
              visit(out, (ch * height + reflect(r + dr)) * width + wrap(c + dc));
            }
          }
        }
      }
    }
  };
  ArrayXd out = ArrayXd::Zero(x.numel());
  const ArrayXd& v = x.value();
  for_each_tap([&](Index o, Index i) { out[o] += v[i] / 9.0; });
  return make_result(x.shape(), out, {&x}, [=](const ArrayXd& g) {
    ArrayXd gx = ArrayXd::Zero(x.numel());
    for_each_tap([&](Index o, Index i) { gx[i] += g[o] / 9.0; });
    accumulate(x, gx);
  });
}

Tensor diff_x(const Tensor& x) {
  require_rank(x, 3, "diff_x");
  const Index lead = x.dim(0) * x.dim(1), width = x.dim(2);
  if (width < 2) fail(ErrorKind::InvalidInput, "diff_x: width must be >= 2");
  ArrayXd out(lead * (width - 1));
  for (Index l = 0; l < lead; ++l) {
    for (Index c = 0; c + 1 < width; ++c) {
      out[l * (width - 1) + c] = x.value()[l * width + c + 1] - x.value()[l * width + c];
    }
  }
  return make_result({x.dim(0), x.dim(1), width - 1}, out, {&x}, [=](const ArrayXd& g) {
    ArrayXd gx = ArrayXd::Zero(x.numel());
    for (Index l = 0; l < lead; ++l) {
      for (Index c = 0; c + 1 < width; ++c) {
        gx[l * width + c + 1] += g[l * (width - 1) + c];
        gx[l * width + c] -= g[l * (width - 1) + c];
      }
    }
    accumulate(x, gx);
  });
}

Tensor diff_y(const Tensor& x) {
  require_rank(x, 3, "diff_y");
  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  if (height < 2) fail(ErrorKind::InvalidInput, "diff_y: height must be >= 2");
  ArrayXd out(channels * (height - 1) * width);
  for (Index ch = 0; ch < channels; ++ch) {
    for (Index r = 0; r + 1 < height; ++r) {
      for (Index c = 0; c < width; ++c) {
        out[(ch * (height - 1) + r) * width + c] =
            x.value()[(ch * height + r + 1) * width + c] - x.value()[(ch * height + r) * width + c];
      }
    }
  }
  return make_result({channels, height - 1, width}, out, {&x}, [=](const ArrayXd& g) {
    ArrayXd gx = ArrayXd::Zero(x.numel());
    for (Index ch = 0; ch < channels; ++ch) {
      for (Index r = 0; r + 1 < height; ++r) {
        for (Index c = 0; c < width; ++c) {
          const double go = g[(ch * (height - 1) + r) * width + c];
          gx[(ch * height + r + 1) * width + c] += go;
          gx[(ch * height + r) * width + c] -= go;
        }
      }
    }
    accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, GradCheckOptions options) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    fail(ErrorKind::InvalidInput, "grad_check: step must lie in [1e-7, 1e-3]");
  }
  std::vector<ArrayXd> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const Tensor& in : inputs) leaves.push_back(tape.watch(Tensor::variable(in.shape(), in.value())));
    Tensor out = f(leaves);
    if (out.numel() != 1) fail(ErrorKind::Usage, "grad_check: function must return a scalar");
    if (out.tape() == &tape) tape.backward(out);
    for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());
  }

  std::vector<Tensor> probe;
  for (const Tensor& in : inputs) probe.push_back(in.clone());
  auto evaluate = [&] { return f(probe).item(); };

  GradCheckReport report;
  const double denom_floor = options.abs_floor / options.tolerance;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double worst = 0.0;
    ArrayXd& v = probe[i].mutable_value();
    for (Index k = 0; k < v.size(); ++k) {
      const double saved = v[k];
      v[k] = saved + options.step;
      const double up = evaluate();
      v[k] = saved - options.step;
      const double down = evaluate();
      v[k] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i][k];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
      worst = std::max(worst, std::isfinite(err) ? err : std::numeric_limits<double>::infinity());
    }
    report.max_rel_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
  }
  report.passed = report.worst < options.tolerance;
  return report;
}

}  // namespace sphdepth
