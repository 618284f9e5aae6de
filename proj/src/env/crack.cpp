#include "bridge/env/crack.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bridge/error.hpp"

namespace bridge::env {

std::string to_string(CrackKind kind) {
  switch (kind) {
    case CrackKind::Line: return "line";
    case CrackKind::Fork: return "fork";
    case CrackKind::Bezier: return "bezier";
  }
  return "?";
}

Point bezier_point(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("bezier parameter t=" + std::to_string(t) + " outside [0, 1]");
  const double s = 1.0 - t;
  return s * s * s * p0 + 3.0 * s * s * t * p1 + 3.0 * s * t * t * p2 + t * t * t * p3;
}

namespace {

bool on_deck(const Point& p, const ScenarioConfig& c) {
  return p.x() >= 0.0 && p.x() <= c.length_m && p.y() >= 0.0 && p.y() <= c.breadth_m;
}

CrackSpec draw(CrackKind kind, std::mt19937_64& rng, const ScenarioConfig& c) {
  std::uniform_real_distribution<double> ux(0.0, c.length_m), uy(0.0, c.breadth_m);
  std::uniform_real_distribution<double> length(kMinCrackLength, kMaxCrackExtent);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> width(0.05, 1.0);

  CrackSpec crack;
  crack.kind = kind;
  const Point p0(ux(rng), uy(rng));
  const double len = length(rng);
  const double theta = angle(rng);
  const Point dir(std::cos(theta), std::sin(theta));
  switch (kind) {
    case CrackKind::Line:
      crack.points = {p0, p0 + len * dir};
      break;
    case CrackKind::Fork: {
      // A line crack extended from its end at a random angle; trunk + branch
      // = len keeps the extent within len.
      const double trunk = len * std::uniform_real_distribution<double>(0.55, 0.8)(rng);
      const double turn = std::uniform_real_distribution<double>(0.35, 1.2)(rng) * (rng() & 1 ? 1.0 : -1.0);
      const Point joint = p0 + trunk * dir;
      const Point bdir(std::cos(theta + turn), std::sin(theta + turn));
      crack.points = {p0, joint, joint, joint + (len - trunk) * bdir};
      break;
    }
    case CrackKind::Bezier: {
      // Same-sign offsets bend into a parabola-like arc, opposite signs into an S.
      const Point normal(-dir.y(), dir.x());
      std::uniform_real_distribution<double> offset(-len / 3.0, len / 3.0);
      crack.points = {p0, p0 + len / 3.0 * dir + offset(rng) * normal, p0 + 2.0 * len / 3.0 * dir + offset(rng) * normal,
                      p0 + len * dir};
      break;
    }
  }
  crack.width = width(rng);
  return crack;
}

bool fits(const CrackSpec& crack, const ScenarioConfig& c) {
  return std::all_of(crack.points.begin(), crack.points.end(), [&](const Point& p) { return on_deck(p, c); }) &&
         crack_extent(crack) <= kMaxCrackExtent;
}

}  // namespace

CrackSpec generate_crack(std::optional<CrackKind> kind, std::mt19937_64& rng, const ScenarioConfig& config) {
  const CrackKind k = kind ? *kind : CrackKind(std::uniform_int_distribution<int>(0, 2)(rng));
  // A 5-20 m crack fits on any deck of at least one 20 m cell almost surely;
  // the bound only guards degenerate configs.
  for (int attempt = 0; attempt < 10000; ++attempt) {
    CrackSpec crack = draw(k, rng, config);
    if (fits(crack, config)) return crack;
  }
  throw ConfigError("deck too small to place a " + to_string(k) + " crack");
}

std::vector<Polyline> crack_polylines(const CrackSpec& crack, int samples) {
  const auto& p = crack.points;
  switch (crack.kind) {
    case CrackKind::Line: return {{p[0], p[1]}};
    case CrackKind::Fork: return {{p[0], p[1]}, {p[2], p[3]}};
    case CrackKind::Bezier: {
      Polyline line;
      line.reserve(std::size_t(samples) + 1);
      for (int i = 0; i <= samples; ++i) line.push_back(bezier_point(p[0], p[1], p[2], p[3], double(i) / samples));
      return {line};
    }
  }
  return {};
}

double crack_extent(const CrackSpec& crack) {
  double best = 0.0;
  for (std::size_t i = 0; i < crack.points.size(); ++i)
    for (std::size_t j = i + 1; j < crack.points.size(); ++j)
      best = std::max(best, (crack.points[i] - crack.points[j]).norm());
  return best;
}

void check_crack(const CrackSpec& crack, const ScenarioConfig& config) {
  const std::size_t expected = crack.kind == CrackKind::Line ? 2 : 4;
  if (crack.points.size() != expected) throw ConfigError(to_string(crack.kind) + " crack has wrong point count");
  if (!(crack.width > 0.0 && crack.width <= 1.0)) throw ConfigError("crack width outside (0, 1]");
  for (const Point& p : crack.points)
    if (!on_deck(p, config)) throw ConfigError("crack point off the deck");
  if (crack_extent(crack) > kMaxCrackExtent + 1e-9) throw ConfigError("crack extent exceeds 20 m");
  if (crack.kind == CrackKind::Fork && crack.points[1] != crack.points[2])
    throw ConfigError("fork branch does not start at the trunk end");
}

std::vector<int> crack_cells(const CrackSpec& crack, const ScenarioConfig& config) {
  const int cols = config.cols(), rows = config.rows();
  auto cell_of = [&](const Point& p) {
    const int x = std::clamp(int(std::floor(p.x() / config.cell_m)), 0, cols - 1);
    const int y = std::clamp(int(std::floor(p.y() / config.cell_m)), 0, rows - 1);
    return y * cols + x;
  };
  std::vector<int> cells;
  // Walk each segment at 1/200 of a cell; finer than any corner clip that
  // could matter for a 2-px stroke.
  const double step = config.cell_m / 200.0;
  for (const Polyline& line : crack_polylines(crack)) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const Point a = line[i], b = line[i + 1];
      const int n = std::max(1, int(std::ceil((b - a).norm() / step)));
      for (int k = 0; k <= n; ++k) cells.push_back(cell_of(a + (b - a) * (double(k) / n)));
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

}  // namespace bridge::env
