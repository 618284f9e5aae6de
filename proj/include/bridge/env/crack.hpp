#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bridge/env/config.hpp"

namespace bridge::env {

using Point = Eigen::Vector2d;  // metres on the deck
using Polyline = std::vector<Point>;

enum class CrackKind { Line, Fork, Bezier };

std::string to_string(CrackKind kind);

inline constexpr double kMinCrackLength = 5.0;
inline constexpr double kMaxCrackExtent = 20.0;

/// Line: {P0, P1}. Fork: trunk {P0, P1} and branch {P2, P3} with P2 == P1.
/// Bezier: cubic control points {P0, P1, P2, P3}.
struct CrackSpec {
  CrackKind kind = CrackKind::Line;
  std::vector<Point> points;
  double width = 0.5;  // metres, in (0, 1]
  bool is_false = false;
};

/// Cubic Bezier. Throws ConfigError when t is outside [0, 1].
Point bezier_point(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t);

/// Random crack whose chord length is uniform in [5, 20] m, fully on the deck
/// and no wider than 20 m in any direction. kind is drawn uniformly when not
/// given. Out-of-bounds draws are resampled.
CrackSpec generate_crack(std::optional<CrackKind> kind, std::mt19937_64& rng, const ScenarioConfig& config);

/// The centreline as polylines (two for a fork). Bezier curves are sampled at
/// `samples` + 1 parameter values.
std::vector<Polyline> crack_polylines(const CrackSpec& crack, int samples = 64);

/// Largest distance between two control points; bounds the drawn extent
/// because each curve lies in the convex hull of its control points.
double crack_extent(const CrackSpec& crack);

/// Throws ConfigError describing the first violated invariant.
void check_crack(const CrackSpec& crack, const ScenarioConfig& config);

/// Row-major indices (y * cols + x) of every cell the centreline passes
/// through, ascending.
std::vector<int> crack_cells(const CrackSpec& crack, const ScenarioConfig& config);

}  // namespace bridge::env
