#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bridge/env/world.hpp"

namespace bridge::render {

using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RenderConfig {
  int resolution = 64;            // pixels per side
  double background_mean = 0.72;
  double background_std = 0.03;   // low-frequency concrete texture
  double noise_std = 0.06;        // per-pixel sensor noise
  double true_intensity = 0.15;   // dark crack
  double false_intensity = 0.45;  // stain / shadow
  double min_thickness_px = 2.0;
  double car_intensity = 0.3;
};

/// Throws ConfigError.
void validate(const RenderConfig& config);

enum class Label { None, Crack, False };
std::string to_string(Label label);
Label parse_label(std::string_view text);

struct Patch {
  Image pixels;  // row r is the row of the cell at y, column c at x; values in [0, 1]
  Mask mask;     // crack geometry before occlusion and noise
  Label label = Label::None;
  int resolution() const { return int(pixels.rows()); }
};

/// Axis-aligned square of deck covered by one patch.
struct CellFrame {
  double x0 = 0.0;
  double y0 = 0.0;
  double size = 100.0;
};

CellFrame frame_of(int cell, const env::ScenarioConfig& config);

/// Pixels whose centres lie within thickness/2 pixels of the centreline
/// (capsule segments, so joints and ends are round). Bezier curves are
/// sampled at 4 * resolution parameter steps.
Mask rasterize(const env::CrackSpec& crack, const CellFrame& frame, int resolution, double thickness_px);

/// Stroke thickness in pixels for a crack, floored at the configured minimum.
double stroke_thickness(const env::CrackSpec& crack, const CellFrame& frame, const RenderConfig& config);

/// The camera image for one cell: texture, cracks intersecting the cell,
/// cars on the cell's lane, then sensor noise; clamped to [0, 1]. A pure
/// function of its arguments.
Patch render_patch(const env::WorldState& world, int cell, const RenderConfig& config, std::uint64_t seed);

/// 8-bit binary PGM. Values are quantised with round(v * 255).
std::string encode_pgm(const Image& image);
Image decode_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

struct ManifestRow {
  std::string filename;
  Label label = Label::None;
  std::string crack_kind;  // line | fork | bezier | none
  std::uint64_t seed = 0;
};

std::string manifest_csv(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

struct DatasetOptions {
  int n = 2000;
  double balance = 0.5;         // share of crack patches
  double false_fraction = 0.25;  // share of the non-crack patches showing a false crack
  std::uint64_t seed = 1;
};

/// Writes patch_NNNNN.pgm files and manifest.csv under dir. Exactly
/// round(n * balance) crack patches; each patch is the middle cell of a 3x3
/// deck holding at most one crack, which may cross the cell border. Byte-identical
/// for equal options.
std::vector<ManifestRow> gen_dataset(const DatasetOptions& options, const RenderConfig& config,
                                     const std::filesystem::path& dir);

/// Cell of dataset_world that gen_dataset renders.
inline constexpr int kDatasetCell = 4;

/// The 3x3-cell world gen_dataset renders for a given patch: label decides
/// whether kDatasetCell shows (part of) a true crack, a false crack or nothing.
env::WorldState dataset_world(Label label, std::uint64_t seed, const RenderConfig& config = {});

}  // namespace bridge::render
