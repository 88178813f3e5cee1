#include "sphdepth/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace sphdepth {

using Eigen::ArrayXd;

namespace {

[[noreturn]] void io_fail(const fs::path& path, const std::string& what) {
  fail(ErrorKind::Io, path.string() + ": " + what);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) io_fail(path, "cannot open for writing");
  return out;
}

void require_image(const Tensor& t, const char* op) {
  if (t.rank() != 3) fail(ErrorKind::InvalidInput, std::string(op) + ": expected [C, H, W], got " + to_string(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// PNG

Tensor read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) io_fail(path, image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    io_fail(path, image.message);
  }
  const Index h = image.height, w = image.width, n = h * w;
  ArrayXd rgb(3 * n);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) rgb[c * n + i] = double(buffer[3 * i + c]) / 255.0;
  }
  return Tensor({3, h, w}, std::move(rgb));
}

void write_png(const fs::path& path, const Tensor& image) {
  require_image(image, "write_png");
  const Index channels = image.dim(0), h = image.dim(1), w = image.dim(2), n = h * w;
  if (channels != 1 && channels != 3) fail(ErrorKind::InvalidInput, "write_png: need 1 or 3 channels");
  std::vector<png_byte> buffer(channels * n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < channels; ++c) {
      const double v = std::clamp(image.value()[c * n + i], 0.0, 1.0);
      buffer[channels * i + c] = png_byte(std::lround(v * 255.0));
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = png_uint_32(w);
  png.height = png_uint_32(h);
  png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) io_fail(path, png.message);
}

// ---------------------------------------------------------------------------
// PFM

Tensor read_pfm(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string magic;
  Index w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  if (!in || magic != "Pf") io_fail(path, "not a single-channel PFM file");
  if (w <= 0 || h <= 0) io_fail(path, "invalid PFM dimensions");
  in.get();  // single whitespace before the raster
  const bool little = scale < 0.0;
  std::vector<std::uint32_t> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(std::uint32_t)));
  if (in.gcount() != std::streamsize(raw.size() * sizeof(std::uint32_t))) io_fail(path, "truncated PFM raster");
  const bool swap = little != (std::endian::native == std::endian::little);
  ArrayXd map(w * h);
  for (Index row = 0; row < h; ++row) {
    for (Index col = 0; col < w; ++col) {
      std::uint32_t bits = raw[row * w + col];
      if (swap) bits = __builtin_bswap32(bits);
      map[(h - 1 - row) * w + col] = double(std::bit_cast<float>(bits));
    }
  }
  return Tensor({1, h, w}, std::move(map));
}

void write_pfm(const fs::path& path, const Tensor& map) {
  require_image(map, "write_pfm");
  if (map.dim(0) != 1) fail(ErrorKind::InvalidInput, "write_pfm: map must have one channel");
  const Index h = map.dim(1), w = map.dim(2);
  std::ofstream out = open_out(path);
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  std::vector<std::uint32_t> raw(w * h);
  for (Index row = 0; row < h; ++row) {
    for (Index col = 0; col < w; ++col) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(float(map.value()[(h - 1 - row) * w + col]));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      raw[row * w + col] = bits;
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * sizeof(std::uint32_t)));
  if (!out) io_fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// Motion JSON

void to_json(nlohmann::json& j, const CameraMotion& m) {
  j = nlohmann::json{{"dv", {m.dv.x(), m.dv.y(), m.dv.z()}}, {"dr_x", m.dr_x}};
}

void from_json(const nlohmann::json& j, CameraMotion& m) {
  const auto& dv = j.at("dv");
  if (!dv.is_array() || dv.size() != 3) throw nlohmann::json::other_error::create(501, "dv must hold 3 numbers", &j);
  m.dv = Eigen::Vector3d(dv.at(0).get<double>(), dv.at(1).get<double>(), dv.at(2).get<double>());
  m.dr_x = j.at("dr_x").get<double>();
  for (const auto& [key, value] : j.items()) {
    if (key != "dv" && key != "dr_x") throw nlohmann::json::other_error::create(502, "unknown key " + key, &j);
  }
}

std::vector<CameraMotion> read_motions(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<CameraMotion> motions;
  try {
    const nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.is_array()) {
      motions = doc.get<std::vector<CameraMotion>>();
    } else {
      motions.push_back(doc.get<CameraMotion>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, path.string() + ": malformed motion record: " + e.what());
  }
  for (const CameraMotion& m : motions) {
    if (!m.is_finite()) fail(ErrorKind::InvalidInput, path.string() + ": non-finite motion");
  }
  return motions;
}

void write_motions(const fs::path& path, const std::vector<CameraMotion>& motions) {
  std::ofstream out = open_out(path);
  out << nlohmann::json(motions).dump(2) << '\n';
  if (!out) io_fail(path, "write failed");
}

void write_motion(const fs::path& path, const CameraMotion& motion) {
  std::ofstream out = open_out(path);
  out << nlohmann::json(motion).dump(2) << '\n';
  if (!out) io_fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// Non-local weights

namespace {
constexpr char kWeightsMagic[4] = {'N', 'L', 'W', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) io_fail(path, "truncated weight file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}
}  // namespace

NonLocalWeights read_nonlocal_weights(const fs::path& path) {
  std::ifstream in = open_in(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) io_fail(path, "bad weight file magic");
  const auto channels = get<std::uint32_t>(in, path);
  auto matrix = [&]() {
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    if (rows > (1u << 16) || cols > (1u << 16)) io_fail(path, "implausible matrix size");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    return m;
  };
  NonLocalWeights w;
  w.theta = matrix();
  w.phi = matrix();
  w.g = matrix();
  w.z = matrix();
  if (w.channels() != Index(channels)) io_fail(path, "header channel count disagrees with matrices");
  w.validate();
  return w;
}

void write_nonlocal_weights(const fs::path& path, const NonLocalWeights& weights) {
  weights.validate();
  std::ofstream out = open_out(path);
  out.write(kWeightsMagic, 4);
  put(out, std::uint32_t(weights.channels()));
  for (const Eigen::MatrixXd* m : {&weights.theta, &weights.phi, &weights.g, &weights.z}) {
    put(out, std::uint32_t(m->rows()));
    put(out, std::uint32_t(m->cols()));
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) put(out, (*m)(r, c));
  }
  if (!out) io_fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// Visualization

namespace {
// Piecewise-linear blue -> cyan -> yellow -> red ramp.
Eigen::Vector3d ramp(double t) {
  static const Eigen::Vector3d stops[] = {{0.05, 0.05, 0.5}, {0.0, 0.75, 0.9}, {0.95, 0.9, 0.1}, {0.8, 0.05, 0.05}};
  t = std::clamp(t, 0.0, 1.0) * 3.0;
  const int i = std::min(int(t), 2);
  return stops[i] + (t - i) * (stops[i + 1] - stops[i]);
}

Tensor apply_ramp(const ArrayXd& t, Index h, Index w) {
  const Index n = h * w;
  ArrayXd rgb(3 * n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::Vector3d c = ramp(t[i]);
    for (int k = 0; k < 3; ++k) rgb[k * n + i] = c[k];
  }
  return Tensor({3, h, w}, std::move(rgb));
}
}  // namespace

Tensor colorize_inverse_depth(const Tensor& depth) {
  require_image(depth, "colorize_inverse_depth");
  const ArrayXd inv = (depth.value() > 0.0).select(depth.value().inverse(), 0.0);
  const double lo = inv.minCoeff(), hi = inv.maxCoeff();
  const ArrayXd t = hi > lo ? ArrayXd((inv - lo) / (hi - lo)) : ArrayXd::Zero(inv.size());
  return apply_ramp(t, depth.dim(1), depth.dim(2));
}

Tensor residual_heatmap(const Tensor& a, const Tensor& b, double max_error) {
  require_image(a, "residual_heatmap");
  if (a.shape() != b.shape()) fail(ErrorKind::InvalidInput, "residual_heatmap: shapes differ");
  const Index c = a.dim(0), n = a.dim(1) * a.dim(2);
  ArrayXd err = ArrayXd::Zero(n);
  for (Index k = 0; k < c; ++k) err += (a.value().segment(k * n, n) - b.value().segment(k * n, n)).abs();
  return apply_ramp(err / (double(c) * max_error), a.dim(1), a.dim(2));
}

}  // namespace sphdepth
