#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "sphdepth/io.hpp"
#include "sphdepth/metrics.hpp"

using namespace sphdepth;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "sphdepth");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sphdepth_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

}  // namespace

TEST_CASE("render writes a deterministic dataset") {
  const fs::path a = scratch("render_a"), b = scratch("render_b");
  const Run r = invoke({"render", "--h", "128", "--steps", "3", "--seed", "7", "--out", a.string()});
  REQUIRE(r.code == 0);
  int png = 0, pfm = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    png += e.path().extension() == ".png";
    pfm += e.path().extension() == ".pfm";
  }
  CHECK(png == 3);
  CHECK(pfm == 3);
  CHECK(fs::exists(a / "motions.json"));
  CHECK(r.out.find("motions.json") != std::string::npos);
  REQUIRE(invoke({"render", "--h", "128", "--steps", "3", "--seed", "7", "--out", b.string()}).code == 0);
  for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
}

TEST_CASE("render validation") {
  const Run r = invoke({"render", "--h", "5", "--out", scratch("odd").string()});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
  CHECK(invoke({"render", "--texture", "plaid", "--out", scratch("plaid").string()}).code == 2);
  CHECK(invoke({"render", "--bogus"}).code == 2);
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("warp: zero motion, rendered pair, missing input") {
  const fs::path d = scratch("warp");
  REQUIRE(invoke({"render", "--h", "64", "--steps", "2", "--out", d.string()}).code == 0);
  write_motion(d / "zero.json", CameraMotion{});
  const fs::path z = d / "z";
  Run r = invoke({"warp", "--image", (d / "frame_000.png").string(), "--depth", (d / "depth_000.pfm").string(),
               "--motion", (d / "zero.json").string(), "--out", z.string()});
  REQUIRE(r.code == 0);
  CHECK((read_png(z / "synth.png").value() == read_png(d / "frame_000.png").value()).all());

  const fs::path m = d / "m";
  r = invoke({"warp", "--image", (d / "frame_000.png").string(), "--depth", (d / "depth_000.pfm").string(), "--motion",
           (d / "motions.json").string(), "--reference", (d / "frame_001.png").string(), "--out", m.string()});
  REQUIRE(r.code == 0);
  CHECK(std::stod(value_of(r.out, "rmse")) < 0.02);
  CHECK(fs::exists(m / "heatmap.png"));
  CHECK(fs::exists(m / "coverage.png"));

  r = invoke({"warp", "--image", (d / "frame_000.png").string(), "--depth", (d / "missing.pfm").string(), "--motion",
           (d / "zero.json").string(), "--out", m.string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("missing.pfm") != std::string::npos);
}

TEST_CASE("optimize: outputs, preconditions and seeded traces") {
  const fs::path d = scratch("opt");
  REQUIRE(invoke({"render", "--h", "16", "--steps", "2", "--out", d.string()}).code == 0);
  const std::string v = (d / "frame_000.png").string(), vp = (d / "frame_001.png").string();
  const fs::path o = d / "o";
  Run r = invoke({"optimize", "--image", v, "--image-prime", vp, "--iterations", "20", "--reference",
               (d / "depth_000.pfm").string(), "--out", o.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"depth.pfm", "depth_prime.pfm", "motion.json", "motion_backward.json", "trace.jsonl",
                        "depth.png", "summary.json"})
    CHECK(fs::exists(o / f));
  std::ifstream trace(o / "trace.jsonl");
  int lines = 0;
  for (std::string line; std::getline(trace, line); ++lines) CHECK(nlohmann::json::parse(line).contains("total"));
  CHECK(lines == 20);
  CHECK(nlohmann::json::parse(slurp(o / "summary.json")).contains("abs_rel"));
  CHECK_FALSE(value_of(r.out, "abs_rel").empty());

  CHECK(invoke({"optimize", "--image", v, "--image-prime", vp, "--flow", "supervised-only", "--out", o.string()}).code ==
        2);

  const fs::path j1 = d / "j1", j2 = d / "j2";
  const std::vector<std::string> joint{"optimize", "--image", v, "--image-prime", vp, "--gt",
                                       (d / "depth_000.pfm").string(), "--gt-prime", (d / "depth_001.pfm").string(),
                                       "--flow", "joint-random", "--seed", "5", "--iterations", "15"};
  auto a = joint, b = joint;
  a.insert(a.end(), {"--out", j1.string()});
  b.insert(b.end(), {"--out", j2.string()});
  REQUIRE(invoke(a).code == 0);
  REQUIRE(invoke(b).code == 0);
  CHECK(slurp(j1 / "trace.jsonl") == slurp(j2 / "trace.jsonl"));

  std::ofstream(d / "bad.json") << R"({"iterations": 5, "learning_rte": 0.1})";
  CHECK(invoke({"optimize", "--image", v, "--image-prime", vp, "--config", (d / "bad.json").string(), "--out",
             o.string()})
            .code == 2);
  std::ofstream(d / "good.json") << R"({"iterations": 3, "lambda_depth": 0.0})";
  r = invoke({"optimize", "--image", v, "--image-prime", vp, "--config", (d / "good.json").string(), "--out",
           o.string()});
  CHECK(r.code == 0);
  CHECK(value_of(r.out, "iterations") == "3");
  CHECK(invoke({"optimize", "--image", v, "--image-prime", vp, "--lr", "-1", "--out", o.string()}).code == 2);
}

TEST_CASE("gradcheck") {
  Run r = invoke({"gradcheck", "--op", "bilinear_splat", "--instances", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("PASS bilinear_splat instances=3", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
  r = invoke({"gradcheck", "--op", "sin", "--instances", "2", "--inject-fault"});
  CHECK(r.code == 4);
  CHECK(r.out.find("FAIL") != std::string::npos);
  CHECK(invoke({"gradcheck", "--op", "nonexistent"}).code == 2);
}

TEST_CASE("eval") {
  const fs::path d = scratch("eval");
  REQUIRE(invoke({"render", "--h", "16", "--steps", "1", "--out", d.string()}).code == 0);
  const std::string gt = (d / "depth_000.pfm").string();
  Run r = invoke({"eval", "--pred", gt, "--gt", gt, "--json", (d / "m.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("abs_rel=0\n") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(d / "m.json"))["abs_rel"] == 0.0);

  const Tensor g = read_pfm(gt);
  write_pfm(d / "affine.pfm", g * 0.5 + 0.25);
  const MetricsReport base = eval_protocol(read_pfm(d / "affine.pfm"), g);
  r = invoke({"eval", "--pred", (d / "affine.pfm").string(), "--gt", gt});
  REQUIRE(r.code == 0);
  CHECK(std::stod(value_of(r.out, "abs_rel")) < 1e-6);
  CHECK(std::abs(std::stod(value_of(r.out, "abs_rel")) - base.abs_rel) < 1e-9);

  write_pfm(d / "small.pfm", Tensor::full({1, 8, 16}, 1.0));
  CHECK(invoke({"eval", "--pred", (d / "small.pfm").string(), "--gt", gt}).code == 2);
  CHECK(invoke({"eval", "--pred", (d / "none.pfm").string(), "--gt", gt}).code == 3);
}
