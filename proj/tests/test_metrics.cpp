#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sphdepth/metrics.hpp"

using namespace sphdepth;
using Eigen::ArrayXd;

namespace {

std::vector<double> vec(const ArrayXd& a) { return {a.data(), a.data() + a.size()}; }

Tensor random_map(std::mt19937_64& rng, Index h, Index w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  ArrayXd v(h * w);
  for (auto& x : v) x = u(rng);
  return Tensor({1, h, w}, v);
}

}  // namespace

TEST_CASE("perfect and constant-ratio predictions") {
  std::mt19937_64 rng(1);
  const Tensor g = random_map(rng, 8, 16, 0.5, 4);
  const Mask all = Mask::Ones(128);
  const MetricsReport r = compute_metrics(g, g, all);
  CHECK(r.abs_rel == 0.0);
  CHECK(r.sq_rel == 0.0);
  CHECK(r.rms == 0.0);
  CHECK(r.rms_log == 0.0);
  CHECK(r.delta1 == 1.0);
  CHECK(r.delta3 == 1.0);
  CHECK(r.count == 128);

  const Tensor one = Tensor::full({1, 8, 16}, 1.0);
  const MetricsReport s = compute_metrics(one * 1.3, one, all);
  CHECK(s.abs_rel == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(s.delta1 == 0.0);
  CHECK(s.delta2 == 1.0);
  CHECK(s.delta3 == 1.0);
}

TEST_CASE("matches the scalar loop and delta is monotone") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution keep(0.85);
  for (int t = 0; t < 100; ++t) {
    const Tensor g = random_map(rng, 8, 16, 0.2, 5);
    Tensor p = random_map(rng, 8, 16, -0.5, 6);
    Mask m(128);
    for (auto& x : m) x = keep(rng);
    m[5] = 1;
    const MetricsReport r = compute_metrics(p, g, m);
    const oracle::Metrics o = oracle::metrics(vec(p.value()), vec(g.value()), vec(m));
    CHECK(std::abs(r.abs_rel - o.abs_rel) < 1e-12);
    CHECK(std::abs(r.sq_rel - o.sq_rel) < 1e-12);
    CHECK(std::abs(r.rms - o.rms) < 1e-12);
    CHECK(std::abs(r.rms_log - o.rms_log) < 1e-12);
    CHECK(std::abs(r.delta1 - o.d1) < 1e-12);
    CHECK(std::abs(r.delta2 - o.d2) < 1e-12);
    CHECK(std::abs(r.delta3 - o.d3) < 1e-12);
    CHECK(r.count == o.count);
    CHECK(r.delta1 <= r.delta2);
    CHECK(r.delta2 <= r.delta3);
  }
}

TEST_CASE("validity mask and errors") {
  ArrayXd g(4);
  g << 1, 0, std::nan(""), 2;
  const Mask m = valid_depth_mask(Tensor({1, 2, 2}, g));
  CHECK((m == (ArrayXd(4) << 1, 0, 0, 1).finished()).all());
  const Tensor t = Tensor::full({1, 2, 2}, 1.0);
  CHECK_THROWS_AS(compute_metrics(t, t, Mask::Zero(4)), Error);
  CHECK_THROWS_AS(compute_metrics(t, Tensor::full({1, 2, 3}, 1.0), Mask::Ones(4)), Error);
}

TEST_CASE("eval_protocol crops and aligns") {
  std::mt19937_64 rng(3);
  const Tensor g = random_map(rng, 16, 32, 0.5, 3);
  const MetricsReport r = eval_protocol(g * 0.4 + 1.7, g);
  CHECK(r.abs_rel < 1e-12);
  CHECK(r.count == 8 * 32);
  CHECK(eval_protocol(Tensor::full({1, 512, 1024}, 1.0) + Tensor({1, 512, 1024}, ArrayXd::LinSpaced(512 * 1024, 0, 1)),
                      Tensor::full({1, 512, 1024}, 2.0))
            .count == 256 * 1024);

  const Tensor p = random_map(rng, 16, 32, 0.5, 3);
  const MetricsReport base = eval_protocol(p, g);
  std::uniform_real_distribution<double> a(0.1, 10), b(-5, 5);
  for (int t = 0; t < 20; ++t) {
    const MetricsReport q = eval_protocol(p * a(rng) + b(rng), g);
    CHECK(std::abs(q.abs_rel - base.abs_rel) < 1e-9);
    CHECK(std::abs(q.rms - base.rms) < 1e-9);
    CHECK(std::abs(q.delta1 - base.delta1) < 1e-9);
  }
  CHECK_THROWS_AS(eval_protocol(p, Tensor::full({1, 8, 16}, 1.0)), Error);
}

TEST_CASE("eval_protocol ignores holes in the ground truth") {
  std::mt19937_64 rng(4);
  Tensor g = random_map(rng, 16, 32, 0.5, 3);
  ArrayXd holed = g.value();
  holed[200] = 0;
  holed[201] = std::nan("");
  const MetricsReport r = eval_protocol(g, Tensor(g.shape(), holed));
  CHECK(r.count == 8 * 32 - 2);
  CHECK(r.abs_rel < 1e-12);
}

TEST_CASE("key=value report") {
  MetricsReport r;
  r.abs_rel = 0.125;
  r.count = 3;
  std::istringstream in(to_key_value(r));
  std::string line;
  std::vector<std::string> keys;
  while (std::getline(in, line)) keys.push_back(line.substr(0, line.find('=')));
  CHECK(keys == std::vector<std::string>{"abs_rel", "sq_rel", "rms", "rms_log", "delta1", "delta2", "delta3", "count"});
  nlohmann::json j = r;
  CHECK(j["abs_rel"] == 0.125);
}
