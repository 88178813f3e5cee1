#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "sphdepth/nonlocal.hpp"

using namespace sphdepth;
using Eigen::ArrayXd;
using Eigen::MatrixXd;

namespace {

oracle::Mat mat(const MatrixXd& m) {
  oracle::Mat o{int(m.rows()), int(m.cols()), {}};
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) o.a.push_back(m(r, c));
  return o;
}

Tensor random_features(std::mt19937_64& rng, Index c, Index h, Index w) {
  std::normal_distribution<double> n(0, 1);
  ArrayXd v(c * h * w);
  for (auto& x : v) x = n(rng);
  return Tensor({c, h, w}, v);
}

}  // namespace

TEST_CASE("matches the brute-force double loop") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Index c = 4, h = 3, w = 3;
    const Tensor f = random_features(rng, c, h, w);
    const NonLocalWeights wt = NonLocalWeights::random(c, 100 + t);
    const Tensor out = non_local_forward(f, wt);
    std::vector<double> att;
    const auto want = oracle::non_local({f.value().data(), f.value().data() + f.numel()}, int(c), int(h * w),
                                        mat(wt.theta), mat(wt.phi), mat(wt.g), mat(wt.z), &att);
    CHECK(out.shape() == f.shape());
    for (Index i = 0; i < out.numel(); ++i) CHECK(std::abs(out.value()[i] - want[i]) < 1e-10);
    const Tensor a = attention_row_stochastic(f, wt);
    for (Index i = 0; i < a.numel(); ++i) CHECK(std::abs(a.value()[i] - att[i]) < 1e-12);
  }
}

TEST_CASE("zero output projection gives the identity") {
  std::mt19937_64 rng(2);
  const Tensor f = random_features(rng, 6, 4, 8);
  const NonLocalWeights w = NonLocalWeights::initial(6, 3);
  CHECK(w.z.isZero(0.0));
  CHECK((non_local_forward(f, w).value() == f.value()).all());
}

TEST_CASE("single position") {
  std::mt19937_64 rng(3);
  const Tensor f = random_features(rng, 4, 1, 1);
  const NonLocalWeights w = NonLocalWeights::random(4, 9);
  const Eigen::VectorXd x = f.value().matrix();
  const Eigen::VectorXd want = x + w.z * w.g * x;
  CHECK((non_local_forward(f, w).value().matrix() - want).cwiseAbs().maxCoeff() < 1e-12);
  const Tensor a = attention_row_stochastic(f, w);
  CHECK(a.shape() == Shape{1, 1});
  CHECK(a.item() == 1.0);
}

TEST_CASE("affinity rows are stochastic") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const Tensor f = random_features(rng, 4, 4, 8);
    const Tensor a = attention_row_stochastic(f, NonLocalWeights::random(4, t, 2.0));
    const Index n = 32;
    for (Index i = 0; i < n; ++i) CHECK(std::abs(a.value().segment(i * n, n).sum() - 1.0) < 1e-12);
    CHECK(a.value().minCoeff() >= 0.0);
  }
  const Tensor uniform = Tensor::full({4, 2, 4}, 0.7);
  const Tensor a = attention_row_stochastic(uniform, NonLocalWeights::random(4, 5));
  CHECK((a.value() - 1.0 / 8).abs().maxCoeff() < 1e-15);
}

TEST_CASE("large logits stay finite") {
  std::mt19937_64 rng(5);
  const Tensor f = random_features(rng, 4, 2, 4) * 100.0;
  const Tensor out = non_local_forward(f, NonLocalWeights::random(4, 6, 3.0));
  CHECK(out.value().allFinite());
}

TEST_CASE("gradients through the block") {
  std::mt19937_64 rng(6);
  const Tensor f0 = random_features(rng, 4, 2, 4);
  const NonLocalWeights w0 = NonLocalWeights::initial(4, 7);
  Tape tape;
  Tensor f = tape.watch(Tensor::variable(f0.shape(), f0.value()));
  NonLocalParams p = NonLocalParams::variable(w0);
  p.theta = tape.watch(p.theta);
  p.phi = tape.watch(p.phi);
  p.g = tape.watch(p.g);
  p.z = tape.watch(p.z);
  tape.backward(sum(non_local_forward(f, p)));
  // With z = 0 only the identity path reaches F.
  CHECK((f.grad() - 1.0).abs().maxCoeff() == 0.0);
  CHECK(p.z.grad().abs().maxCoeff() > 0.0);
  CHECK(p.theta.grad().abs().maxCoeff() == 0.0);

  const auto r = grad_check(
      [](const std::vector<Tensor>& in) {
        const NonLocalParams q{in[1], in[2], in[3], in[4]};
        return sum(square(non_local_forward(in[0], q)));
      },
      {f0, NonLocalParams::constant(NonLocalWeights::random(4, 8)).theta,
       NonLocalParams::constant(NonLocalWeights::random(4, 8)).phi,
       NonLocalParams::constant(NonLocalWeights::random(4, 8)).g,
       NonLocalParams::constant(NonLocalWeights::random(4, 8)).z});
  CHECK(r.passed);
}

TEST_CASE("validation") {
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(NonLocalWeights::initial(3, 1), Error);
  CHECK_THROWS_AS(non_local_forward(random_features(rng, 6, 2, 2), NonLocalWeights::random(4, 1)), Error);
  NonLocalWeights bad = NonLocalWeights::random(4, 1);
  bad.z.resize(4, 3);
  CHECK_THROWS_AS(bad.validate(), Error);
}
