#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "sphdepth/autodiff.hpp"
#include "sphdepth/nonlocal.hpp"
#include "sphdepth/warp.hpp"

namespace sphdepth {

namespace fs = std::filesystem;

/// 8-bit PNG. Reading yields [3, H, W] in [0, 1] (gray is replicated);
/// writing accepts [3, H, W] or [1, H, W], clamps to [0, 1] and rounds.
Tensor read_png(const fs::path& path);
void write_png(const fs::path& path, const Tensor& image);

/// Single-channel little-endian PFM ("Pf", scale -1). Rows are stored
/// bottom-up as the format requires; tensors are top-down [1, H, W].
Tensor read_pfm(const fs::path& path);
void write_pfm(const fs::path& path, const Tensor& map);

void to_json(nlohmann::json& j, const CameraMotion& m);
void from_json(const nlohmann::json& j, CameraMotion& m);

/// Accepts either a single {"dv": [x, y, z], "dr_x": r} record or an array
/// of them.
std::vector<CameraMotion> read_motions(const fs::path& path);
void write_motions(const fs::path& path, const std::vector<CameraMotion>& motions);
void write_motion(const fs::path& path, const CameraMotion& motion);

/// Binary non-local weights: "NLW1", uint32 C, then theta, phi, g, z each
/// as uint32 rows, uint32 cols and rows*cols row-major float64, all
/// little-endian.
NonLocalWeights read_nonlocal_weights(const fs::path& path);
void write_nonlocal_weights(const fs::path& path, const NonLocalWeights& weights);

/// Inverse-depth false-color visualization, [3, H, W].
Tensor colorize_inverse_depth(const Tensor& depth);
/// Absolute-error heat map of two [C, H, W] images, [3, H, W].
Tensor residual_heatmap(const Tensor& a, const Tensor& b, double max_error = 0.25);

}  // namespace sphdepth
