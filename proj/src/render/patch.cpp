#include "bridge/render/patch.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/io.hpp"

namespace bridge::render {

namespace {

constexpr int kTextureGrid = 5;
constexpr double kCarLength = 5.0;  // metres
constexpr double kCarWidth = 2.5;

bool unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

double segment_distance(double px, double py, const env::Point& a, const env::Point& b) {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x()) * dx + (py - a.y()) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (a.x() + t * dx), ey = py - (a.y() + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Smooth zero-mean field: bilinear interpolation of a coarse Gaussian grid.
Image texture(int res, double std_dev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd grid(kTextureGrid, kTextureGrid);
  for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = n(rng);
  Image field(res, res);
  const double scale = double(kTextureGrid - 1) / std::max(1, res - 1);
  for (int r = 0; r < res; ++r) {
    const double gy = r * scale;
    const int y0 = std::min(int(gy), kTextureGrid - 2);
    const double fy = gy - y0;
    for (int c = 0; c < res; ++c) {
      const double gx = c * scale;
      const int x0 = std::min(int(gx), kTextureGrid - 2);
      const double fx = gx - x0;
      field(r, c) = (1 - fy) * ((1 - fx) * grid(y0, x0) + fx * grid(y0, x0 + 1)) +
                    fy * ((1 - fx) * grid(y0 + 1, x0) + fx * grid(y0 + 1, x0 + 1));
    }
  }
  field.array() -= field.mean();
  return field * std_dev;
}

}  // namespace

void validate(const RenderConfig& c) {
  if (c.resolution < 16) throw ConfigError("render resolution must be >= 16");
  if (!unit(c.background_mean) || !unit(c.true_intensity) || !unit(c.false_intensity) || !unit(c.car_intensity))
    throw ConfigError("render intensities must lie in [0, 1]");
  if (!(c.background_std >= 0.0) || !(c.noise_std >= 0.0)) throw ConfigError("render std devs must be >= 0");
  if (!(c.min_thickness_px > 0.0)) throw ConfigError("min stroke thickness must be positive");
  if (!(std::abs(c.background_mean - c.true_intensity) > std::abs(c.background_mean - c.false_intensity)))
    throw ConfigError("true cracks must contrast more with the background than false cracks");
}

std::string to_string(Label label) {
  switch (label) {
    case Label::None: return "none";
    case Label::Crack: return "crack";
    case Label::False: return "false";
  }
  return "?";
}

Label parse_label(std::string_view text) {
  if (text == "none") return Label::None;
  if (text == "crack") return Label::Crack;
  if (text == "false") return Label::False;
  throw FormatError("unknown label '" + std::string(text) + "'");
}

CellFrame frame_of(int cell, const env::ScenarioConfig& config) {
  const env::Cell c = env::cell_at(cell, config);
  return {c.x * config.cell_m, c.y * config.cell_m, config.cell_m};
}

Mask rasterize(const env::CrackSpec& crack, const CellFrame& frame, int resolution, double thickness_px) {
  Mask mask = Mask::Zero(resolution, resolution);
  const double px_per_m = resolution / frame.size;
  const double radius = thickness_px / 2.0;
  for (const env::Polyline& line : env::crack_polylines(crack, 4 * resolution)) {
    // Work in pixel coordinates: pixel (r, c) has its centre at (c + 0.5, r + 0.5).
    std::vector<env::Point> pts;
    pts.reserve(line.size());
    for (const env::Point& p : line) pts.emplace_back((p.x() - frame.x0) * px_per_m, (p.y() - frame.y0) * px_per_m);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const env::Point &a = pts[i], &b = pts[i + 1];
      const int c0 = std::max(0, int(std::floor(std::min(a.x(), b.x()) - radius - 1)));
      const int c1 = std::min(resolution - 1, int(std::ceil(std::max(a.x(), b.x()) + radius + 1)));
      const int r0 = std::max(0, int(std::floor(std::min(a.y(), b.y()) - radius - 1)));
      const int r1 = std::min(resolution - 1, int(std::ceil(std::max(a.y(), b.y()) + radius + 1)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
          if (segment_distance(c + 0.5, r + 0.5, a, b) <= radius) mask(r, c) = 1;
    }
  }
  return mask;
}

double stroke_thickness(const env::CrackSpec& crack, const CellFrame& frame, const RenderConfig& config) {
  return std::max(config.min_thickness_px, crack.width * config.resolution / frame.size);
}

Patch render_patch(const env::WorldState& world, int cell, const RenderConfig& config, std::uint64_t seed) {
  validate(config);
  const env::ScenarioConfig& sc = world.config;
  if (cell < 0 || cell >= sc.cells()) throw ConfigError("cell " + std::to_string(cell) + " outside the grid");
  const int res = config.resolution;
  const CellFrame frame = frame_of(cell, sc);
  std::mt19937_64 rng(seed);

  Patch patch;
  patch.pixels = Image::Constant(res, res, config.background_mean) + texture(res, config.background_std, rng);
  patch.mask = Mask::Zero(res, res);

  bool has_true = false, has_false = false;
  // False cracks first so a true crack always wins an overlap.
  for (int pass = 0; pass < 2; ++pass) {
    for (int id : world.cell_cracks[std::size_t(cell)]) {
      const env::CrackSpec& crack = world.cracks[std::size_t(id)];
      if (crack.is_false != (pass == 0)) continue;
      const Mask m = rasterize(crack, frame, res, stroke_thickness(crack, frame, config));
      if ((m.array() == 0).all()) continue;
      const double ink = crack.is_false ? config.false_intensity : config.true_intensity;
      for (Eigen::Index i = 0; i < m.size(); ++i)
        if (m.data()[i]) {
          patch.pixels.data()[i] = ink;
          patch.mask.data()[i] = 1;
        }
      (crack.is_false ? has_false : has_true) = true;
    }
  }
  patch.label = has_true ? Label::Crack : has_false ? Label::False : Label::None;

  const double px_per_m = res / frame.size;
  const env::Cell cc = env::cell_at(cell, sc);
  for (const env::CarState& car : world.cars) {
    if (car.lane != cc.y) continue;
    // Cars drive along the middle of their lane.
    const double cx = (car.position - frame.x0) * px_per_m, cy = res / 2.0;
    const double hx = kCarLength / 2.0 * px_per_m, hy = kCarWidth / 2.0 * px_per_m;
    for (int r = std::max(0, int(std::floor(cy - hy))); r < std::min(res, int(std::ceil(cy + hy))); ++r)
      for (int c = std::max(0, int(std::floor(cx - hx))); c < std::min(res, int(std::ceil(cx + hx))); ++c)
        patch.pixels(r, c) = config.car_intensity;
  }

  if (config.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_std);
    for (Eigen::Index i = 0; i < patch.pixels.size(); ++i) patch.pixels.data()[i] += noise(rng);
  }
  patch.pixels = patch.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return patch;
}

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  out.reserve(out.size() + std::size_t(image.size()));
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c)
      out.push_back(char(std::lround(std::clamp(image(r, c), 0.0, 1.0) * 255.0)));
  return out;
}

Image decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("PGM header truncated");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError("not a binary PGM (P5)");
  const long long w = parse_int("pgm width", token()), h = parse_int("pgm height", token());
  const long long maxval = parse_int("pgm maxval", token());
  if (w <= 0 || h <= 0 || w > 1 << 15 || h > 1 << 15) throw FormatError("PGM dimensions out of range");
  if (maxval < 1 || maxval > 255) throw FormatError("only 8-bit PGM is supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + std::size_t(w * h)) throw FormatError("PGM pixel data truncated");
  Image image(h, w);
  for (long long i = 0; i < w * h; ++i)
    image.data()[i] = static_cast<unsigned char>(bytes[pos + std::size_t(i)]) / double(maxval);
  return image;
}

void write_pgm(const std::filesystem::path& path, const Image& image) { write_file_atomic(path, encode_pgm(image)); }
Image read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

std::string manifest_csv(const std::vector<ManifestRow>& rows) {
  std::string out = "filename,label,crack_kind,seed\n";
  for (const auto& r : rows)
    out += r.filename + "," + to_string(r.label) + "," + r.crack_kind + "," + std::to_string(r.seed) + "\n";
  return out;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("filename,label", 0) != 0)
    throw FormatError(path.string() + ": manifest lacks the filename,label header");
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() < 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": too few fields");
    ManifestRow row;
    row.filename = f[0];
    row.label = parse_label(f[1]);
    row.crack_kind = f.size() > 2 ? f[2] : "";
    if (f.size() > 3) row.seed = parse_u64("seed", f[3]);
    rows.push_back(row);
  }
  return rows;
}

env::WorldState dataset_world(Label label, std::uint64_t seed, const RenderConfig& config) {
  env::WorldState world;
  world.config = env::ScenarioConfig{};
  world.config.length_m = world.config.breadth_m = 3 * world.config.cell_m;
  world.config.n_cars = 0;
  world.seed = seed;
  world.cell_cracks.assign(std::size_t(world.config.cells()), {});
  if (label == Label::None) return world;
  // Cracks land anywhere on a 3x3 deck; keep one that shows in the middle
  // cell, so border-crossing fragments appear as often as they do in flight.
  const CellFrame frame = frame_of(kDatasetCell, world.config);
  std::mt19937_64 rng(derive_seed(seed, {1}));
  for (;;) {
    env::CrackSpec crack = env::generate_crack(std::nullopt, rng, world.config);
    crack.is_false = label == Label::False;
    std::vector<int> cells = env::crack_cells(crack, world.config);
    if (std::find(cells.begin(), cells.end(), kDatasetCell) == cells.end()) continue;
    if ((rasterize(crack, frame, config.resolution, stroke_thickness(crack, frame, config)).array() == 0).all())
      continue;
    for (int c : cells) world.cell_cracks[std::size_t(c)].push_back(0);
    world.cracks.push_back(crack);
    world.crack_cells.push_back(cells);
    return world;
  }
}

std::vector<ManifestRow> gen_dataset(const DatasetOptions& o, const RenderConfig& config,
                                     const std::filesystem::path& dir) {
  if (o.n < 2) throw ConfigError("dataset needs n >= 2");
  if (!(o.balance > 0.0 && o.balance < 1.0)) throw ConfigError("balance must lie in (0, 1)");
  if (!(o.false_fraction >= 0.0 && o.false_fraction <= 1.0)) throw ConfigError("false_fraction must lie in [0, 1]");
  validate(config);

  const int n_crack = int(std::lround(o.n * o.balance));
  const int n_false = int(std::lround((o.n - n_crack) * o.false_fraction));
  std::vector<Label> labels(std::size_t(o.n), Label::None);
  std::fill_n(labels.begin(), n_crack, Label::Crack);
  std::fill_n(labels.begin() + n_crack, n_false, Label::False);
  std::mt19937_64 shuffle_rng(derive_seed(o.seed, {0}));
  std::shuffle(labels.begin(), labels.end(), shuffle_rng);

  std::vector<ManifestRow> rows;
  rows.reserve(labels.size());
  for (int i = 0; i < o.n; ++i) {
    const std::uint64_t seed = derive_seed(o.seed, {1, std::uint64_t(i)});
    const env::WorldState world = dataset_world(labels[std::size_t(i)], seed, config);
    const Patch patch = render_patch(world, kDatasetCell, config, derive_seed(seed, {2}));
    char name[32];
    std::snprintf(name, sizeof name, "patch_%05d.pgm", i);
    write_pgm(dir / name, patch.pixels);
    rows.push_back({name, patch.label, world.cracks.empty() ? "none" : env::to_string(world.cracks[0].kind), seed});
  }
  write_file_atomic(dir / "manifest.csv", manifest_csv(rows));
  return rows;
}

}  // namespace bridge::render
