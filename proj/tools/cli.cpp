#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sphdepth/gradsuite.hpp"
#include "sphdepth/io.hpp"
#include "sphdepth/metrics.hpp"
#include "sphdepth/optimizer.hpp"
#include "sphdepth/scene.hpp"

namespace sphdepth::cli {

namespace {

using nlohmann::json;

fs::path default_out() {
  const char* env = std::getenv("SPHDEPTH_OUT");
  return env && *env ? fs::path(env) : fs::path(".");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, dir.string() + ": " + ec.message());
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, path.string() + ": cannot open for writing");
  f << std::setprecision(17);
  return f;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f = open_text(path);
  f << j.dump(2) << '\n';
  if (!f) fail(ErrorKind::Io, path.string() + ": write failed");
}

// ---- render ----------------------------------------------------------------

struct RenderArgs {
  Index height = 64;
  std::size_t frames = 2;
  std::uint64_t seed = 0;
  std::string texture = "smooth";
  double step = 0.2;
  std::vector<double> start{-0.1, 0.3, 0.0};
  double yaw = 0.0;
  fs::path out;
};

TextureKind parse_texture(const std::string& name) {
  if (name == "smooth") return TextureKind::Smooth;
  if (name == "checker") return TextureKind::Checkerboard;
  if (name == "uniform") return TextureKind::Uniform;
  fail(ErrorKind::InvalidInput, "unknown texture '" + name + "' (smooth, checker, uniform)");
}

int cmd_render(const RenderArgs& a, std::ostream& out) {
  if (a.height < 2 || a.height % 2) {
    fail(ErrorKind::AspectRatio, "render: --h must be even and >= 2, got " + std::to_string(a.height));
  }
  SceneSpec spec;
  spec.texture = parse_texture(a.texture);
  spec.seed = a.seed;
  const Room room(spec);
  const CameraPose start{Eigen::Vector3d(a.start[0], a.start[1], a.start[2]), a.yaw};
  const Trajectory traj = Trajectory::forward(start, a.step, a.frames);
  traj.validate(room);
  ensure_dir(a.out);
  for (const fs::path& p : export_dataset(room, traj, PixelGrid(a.height), a.out)) out << p.string() << '\n';
  return 0;
}

// ---- warp ------------------------------------------------------------------

struct WarpArgs {
  fs::path image, depth, motion, reference;
  std::size_t index = 0;
  fs::path out;
};

int cmd_warp(const WarpArgs& a, std::ostream& out) {
  const Tensor image = read_png(a.image);
  const Tensor depth = read_pfm(a.depth);
  const std::vector<CameraMotion> motions = read_motions(a.motion);
  if (a.index >= motions.size()) {
    fail(ErrorKind::InvalidInput, a.motion.string() + ": no motion record " + std::to_string(a.index));
  }
  if (depth.dim(1) != image.dim(1) || depth.dim(2) != image.dim(2)) {
    fail(ErrorKind::InvalidInput, "warp: image " + to_string(image.shape()) + " and depth " +
                                      to_string(depth.shape()) + " differ in size");
  }
  const SplatResult syn = synthesize_image(image, depth, motions[a.index]);

  ensure_dir(a.out);
  write_png(a.out / "synth.png", syn.image);
  write_png(a.out / "coverage.png", Tensor({1, image.dim(1), image.dim(2)}, syn.coverage));
  out << "synth=" << (a.out / "synth.png").string() << '\n';
  out << "coverage_map=" << (a.out / "coverage.png").string() << '\n';
  out << "coverage=" << syn.coverage.mean() << '\n';

  if (!a.reference.empty()) {
    const Tensor ref = read_png(a.reference);
    if (ref.shape() != image.shape()) fail(ErrorKind::InvalidInput, "warp: reference size differs from image");
    const Index n = syn.coverage.size();
    double sq = 0.0;
    for (Index c = 0; c < image.dim(0); ++c) {
      const Eigen::ArrayXd diff = syn.image.value().segment(c * n, n) - ref.value().segment(c * n, n);
      sq += (diff.square() * syn.coverage).sum();
    }
    const double count = syn.coverage.sum() * double(image.dim(0));
    if (count == 0.0) fail(ErrorKind::DegenerateCoverage, "warp: nothing covered");
    write_png(a.out / "heatmap.png", residual_heatmap(syn.image, ref));
    out << "heatmap=" << (a.out / "heatmap.png").string() << '\n';
    out << "rmse=" << std::sqrt(sq / count) << '\n';
  }
  return 0;
}

// ---- optimize --------------------------------------------------------------

struct OptimizeArgs {
  fs::path image, image_prime, gt, gt_prime, reference, config;
  std::optional<std::string> flow;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<double> lr, lambda_image, lambda_depth, alpha, init_depth, crop, self_probability;
  fs::path out;
};

void apply_config_file(const fs::path& path, OptimConfig& c) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Io, path.string() + ": cannot open");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::InvalidInput, path.string() + ": expected a JSON object");
  const std::map<std::string, std::function<void(const json&)>> setters{
      {"iterations", [&](const json& v) { c.iterations = v.get<int>(); }},
      {"learning_rate", [&](const json& v) { c.learning_rate = v.get<double>(); }},
      {"beta1", [&](const json& v) { c.beta1 = v.get<double>(); }},
      {"beta2", [&](const json& v) { c.beta2 = v.get<double>(); }},
      {"lambda_image", [&](const json& v) { c.weights.lambda_image = v.get<double>(); }},
      {"lambda_depth", [&](const json& v) { c.weights.lambda_depth = v.get<double>(); }},
      {"alpha", [&](const json& v) { c.weights.alpha = v.get<double>(); }},
      {"init_depth", [&](const json& v) { c.init_depth = v.get<double>(); }},
      {"crop_degrees", [&](const json& v) { c.crop_degrees = v.get<double>(); }},
      {"flow", [&](const json& v) { c.flow = parse_flow(v.get<std::string>()); }},
      {"self_probability", [&](const json& v) { c.self_probability = v.get<double>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) fail(ErrorKind::InvalidInput, path.string() + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidInput, path.string() + ": bad value for '" + key + "': " + e.what());
    }
  }
}

void write_trace(const fs::path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream f = open_text(path);
  for (const TraceRecord& r : trace) {
    f << json{{"iteration", r.iteration}, {"flow", r.flow},         {"image", r.image},
              {"depth", r.depth},         {"pose", r.pose},         {"pixel", r.pixel},
              {"gradient", r.gradient},   {"total", r.total}}
             .dump()
      << '\n';
  }
  if (!f) fail(ErrorKind::Io, path.string() + ": write failed");
}

int cmd_optimize(const OptimizeArgs& a, std::ostream& out) {
  OptimConfig config;
  if (!a.config.empty()) apply_config_file(a.config, config);
  if (a.flow) config.flow = parse_flow(*a.flow);
  if (a.seed) config.seed = *a.seed;
  if (a.iterations) config.iterations = *a.iterations;
  if (a.lr) config.learning_rate = *a.lr;
  if (a.lambda_image) config.weights.lambda_image = *a.lambda_image;
  if (a.lambda_depth) config.weights.lambda_depth = *a.lambda_depth;
  if (a.alpha) config.weights.alpha = *a.alpha;
  if (a.init_depth) config.init_depth = *a.init_depth;
  if (a.crop) config.crop_degrees = *a.crop;
  if (a.self_probability) config.self_probability = *a.self_probability;
  config.validate();
  if (config.flow != FlowSchedule::SelfOnly && a.gt.empty()) {
    fail(ErrorKind::Usage, std::string("optimize: --flow ") + to_string(config.flow) + " requires --gt");
  }

  const Tensor v = read_png(a.image);
  const Tensor v_prime = read_png(a.image_prime);
  std::optional<Tensor> gt, gt_prime, reference;
  if (!a.gt.empty()) gt = read_pfm(a.gt);
  if (!a.gt_prime.empty()) gt_prime = read_pfm(a.gt_prime);
  if (!a.reference.empty()) reference = read_pfm(a.reference);

  ensure_dir(a.out);
  OptimResult result;
  try {
    result = optimize_pair(v, v_prime, config, gt, gt_prime);
  } catch (const DivergenceError& e) {
    write_trace(a.out / "trace.jsonl", e.trace());
    throw;
  }

  write_pfm(a.out / "depth.pfm", result.depth);
  write_pfm(a.out / "depth_prime.pfm", result.depth_prime);
  write_motion(a.out / "motion.json", result.forward);
  write_motion(a.out / "motion_backward.json", result.backward);
  write_trace(a.out / "trace.jsonl", result.trace);
  write_png(a.out / "depth.png", colorize_inverse_depth(result.depth));

  json summary{{"flow", to_string(config.flow)},
               {"iterations", config.iterations},
               {"seed", config.seed},
               {"final_total", result.trace.back().total},
               {"motion", result.forward},
               {"motion_backward", result.backward}};
  if (reference) summary["abs_rel"] = eval_protocol(result.depth, *reference).abs_rel;
  write_json(a.out / "summary.json", summary);

  out << std::setprecision(10);
  out << "flow=" << to_string(config.flow) << '\n'
      << "iterations=" << config.iterations << '\n'
      << "final_total=" << result.trace.back().total << '\n';
  if (reference) out << "abs_rel=" << summary["abs_rel"].get<double>() << '\n';
  out << "out=" << a.out.string() << '\n';
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::string op;
  int instances = 20;
  bool inject_fault = false;
  double step = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions options;
  options.step = a.step;
  bool ok = true;
  out << std::setprecision(3);
  for (const GradCaseSummary& s : run_gradient_suite(a.op, a.instances, a.inject_fault, options)) {
    out << (s.passed ? "PASS " : "FAIL ") << s.name << " instances=" << s.instances << " worst=" << s.worst
        << '\n';
    ok = ok && s.passed;
  }
  if (!ok) {
    out << "gradient check failed\n";
    return exit_code(ErrorKind::Divergence);
  }
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path pred, gt, json_path;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const MetricsReport r = eval_protocol(read_pfm(a.pred), read_pfm(a.gt));
  out << to_key_value(r);
  if (!a.json_path.empty()) {
    json j = r;
    write_json(a.json_path, j);
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth and camera motion from equirectangular frame pairs"};
  app.require_subcommand(1);
  const fs::path out_dir = default_out();

  RenderArgs render;
  render.out = out_dir;
  auto* r = app.add_subcommand("render", "Render a synthetic box-room sequence");
  r->set_help_flag("--help", "Print this help message and exit");  // frees --h
  r->add_option("--h", render.height, "Frame height (width is 2h)")->capture_default_str();
  r->add_option("--steps", render.frames, "Number of frames")->capture_default_str();
  r->add_option("--seed", render.seed, "Scene seed")->capture_default_str();
  r->add_option("--texture", render.texture, "smooth, checker or uniform")->capture_default_str();
  r->add_option("--step", render.step, "Forward distance between frames")->capture_default_str();
  r->add_option("--start", render.start, "Start position x y z")->expected(3)->capture_default_str();
  r->add_option("--yaw", render.yaw, "Heading in radians")->capture_default_str();
  r->add_option("--out", render.out, "Output directory (default $SPHDEPTH_OUT or .)");

  WarpArgs warp;
  warp.out = out_dir;
  auto* w = app.add_subcommand("warp", "Synthesize the next view from an image, its depth and a motion");
  w->add_option("--image", warp.image, "Source frame (PNG)")->required();
  w->add_option("--depth", warp.depth, "Source depth (PFM)")->required();
  w->add_option("--motion", warp.motion, "Motion JSON (record or array)")->required();
  w->add_option("--index", warp.index, "Record to use when the motion file holds an array")->capture_default_str();
  w->add_option("--reference", warp.reference, "Rendered next frame (PNG) for RMSE and heat map");
  w->add_option("--out", warp.out, "Output directory (default $SPHDEPTH_OUT or .)");

  OptimizeArgs opt;
  opt.out = out_dir;
  auto* o = app.add_subcommand("optimize", "Recover depth and motion for a frame pair");
  o->add_option("--image", opt.image, "First frame (PNG)")->required();
  o->add_option("--image-prime", opt.image_prime, "Second frame (PNG)")->required();
  o->add_option("--gt", opt.gt, "Ground-truth depth of the first frame (PFM), zeros are holes");
  o->add_option("--gt-prime", opt.gt_prime, "Ground-truth depth of the second frame (PFM)");
  o->add_option("--reference", opt.reference, "Depth (PFM) used only to report abs_rel in the summary");
  o->add_option("--config", opt.config, "JSON file of optimizer settings");
  o->add_option("--flow", opt.flow, "self-only (default), supervised-only or joint-random");
  o->add_option("--seed", opt.seed, "Flow schedule seed");
  o->add_option("--iterations", opt.iterations, "Optimizer steps");
  o->add_option("--lr", opt.lr, "Learning rate");
  o->add_option("--lambda-image", opt.lambda_image, "Weight of the image consistency loss");
  o->add_option("--lambda-depth", opt.lambda_depth, "Weight of the depth consistency loss");
  o->add_option("--alpha", opt.alpha, "L1 weight inside the image loss");
  o->add_option("--init-depth", opt.init_depth, "Initial depth");
  o->add_option("--crop", opt.crop, "Degrees removed at each pole before losses");
  o->add_option("--self-probability", opt.self_probability, "Chance of a self-supervised step (joint-random)");
  o->add_option("--out", opt.out, "Output directory (default $SPHDEPTH_OUT or .)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare tape gradients with finite differences");
  g->add_option("--op", gc.op, "Check a single op");
  g->add_option("--instances", gc.instances, "Random instances per op")->capture_default_str();
  g->add_option("--step", gc.step, "Finite-difference step")->capture_default_str();
  g->add_flag("--inject-fault", gc.inject_fault, "Add an op with a wrong backward (must fail)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Depth metrics after scale/shift alignment and row crop");
  e->add_option("--pred", ev.pred, "Predicted depth (PFM)")->required();
  e->add_option("--gt", ev.gt, "Ground-truth depth (PFM)")->required();
  e->add_option("--json", ev.json_path, "Also write the report as JSON");

  std::vector<const char*> argv;
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : exit_code(ErrorKind::Usage);
  }

  try {
    if (*r) return cmd_render(render, out);
    if (*w) return cmd_warp(warp, out);
    if (*o) return cmd_optimize(opt, out);
    if (*g) return cmd_gradcheck(gc, out);
    if (*e) return cmd_eval(ev, out);
  } catch (const Error& ex) {
    err << "error (" << to_string(ex.kind()) << "): " << ex.what() << '\n';
    return exit_code(ex.kind());
  } catch (const fs::filesystem_error& ex) {
    err << "error (io): " << ex.what() << '\n';
    return exit_code(ErrorKind::Io);
  }
  return exit_code(ErrorKind::Usage);
}

}  // namespace sphdepth::cli
