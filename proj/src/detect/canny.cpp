#include "bridge/detect/canny.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "bridge/error.hpp"

namespace bridge::detect {

namespace {

using Index = Eigen::Index;

Image blur(const Image& in, int k, double sigma) {
  const int half = k / 2;
  std::vector<double> w(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += w[std::size_t(i)] = std::exp(-0.5 * (i - half) * (i - half) / (sigma * sigma));
  for (double& v : w) v /= sum;

  // Replicate-pad once, then run both passes without bounds checks. The
  // padded rows equal the clamped reads tap for tap.
  const Index rows = in.rows(), cols = in.cols(), pc = cols + 2 * half;
  std::vector<double> padded(std::size_t((rows + 2 * half) * pc));
  for (Index pr = 0; pr < rows + 2 * half; ++pr) {
    const double* src = in.data() + std::clamp<Index>(pr - half, 0, rows - 1) * cols;
    double* dst = padded.data() + pr * pc;
    for (Index c = 0; c < pc; ++c) dst[c] = src[std::clamp<Index>(c - half, 0, cols - 1)];
  }
  std::vector<double> tmp(std::size_t((rows + 2 * half) * cols));
  for (Index pr = 0; pr < rows + 2 * half; ++pr) {
    const double* src = padded.data() + pr * pc;
    double* dst = tmp.data() + pr * cols;
    for (Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += w[std::size_t(i)] * src[c + i];
      dst[c] = acc;
    }
  }
  Image out(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += w[std::size_t(i)] * tmp[std::size_t((r + i) * cols + c)];
      out(r, c) = acc;
    }
  return out;
}

}  // namespace

void validate(const CannyConfig& c) {
  if (c.kernel_size < 3 || c.kernel_size % 2 == 0) throw ConfigError("Gaussian kernel size must be odd and >= 3");
  if (!(c.sigma > 0.0)) throw ConfigError("Gaussian sigma must be positive");
  if (!(c.low > 0.0 && c.low < c.high && c.high < 1.0)) throw ConfigError("thresholds need 0 < low < high < 1");
  if (!(c.decision_threshold > 0.0 && c.decision_threshold <= 1.0))
    throw ConfigError("decision threshold must lie in (0, 1]");
  if (!(c.gradient_scale > 0.0)) throw ConfigError("gradient scale must be positive");
  if (!(c.reference_fraction > 0.0)) throw ConfigError("reference fraction must be positive");
}

CannyStages canny_stages(const Image& patch, const CannyConfig& config) {
  validate(config);
  if (patch.rows() < config.kernel_size || patch.cols() < config.kernel_size)
    throw ConfigError("patch " + std::to_string(patch.rows()) + "x" + std::to_string(patch.cols()) +
                      " is smaller than the " + std::to_string(config.kernel_size) + "-px kernel");
  const Index rows = patch.rows(), cols = patch.cols();
  CannyStages s;
  s.blurred = blur(patch, config.kernel_size, config.sigma);

  // Interior pixels read the blurred image directly; the one-pixel border
  // goes through the replicate clamp.
  auto at = [&](Index r, Index c) { return s.blurred(std::clamp<Index>(r, 0, rows - 1), std::clamp<Index>(c, 0, cols - 1)); };
  // Direction bins of the gradient angle folded into [0, 180): 0 below 22.5
  // or from 157.5 degrees, then 45-degree sectors. tan() bounds replace atan2.
  const double t1 = std::tan(std::numbers::pi / 8), t2 = std::tan(3 * std::numbers::pi / 8);
  const double inv_scale = 1.0 / config.gradient_scale;
  s.magnitude.resize(rows, cols);
  s.direction.resize(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const bool edge_row = r == 0 || r == rows - 1;
    for (Index c = 0; c < cols; ++c) {
      double nw, n, ne, w, e, sw, so, se;
      if (edge_row || c == 0 || c == cols - 1) {
        nw = at(r - 1, c - 1), n = at(r - 1, c), ne = at(r - 1, c + 1), w = at(r, c - 1), e = at(r, c + 1);
        sw = at(r + 1, c - 1), so = at(r + 1, c), se = at(r + 1, c + 1);
      } else {
        nw = s.blurred(r - 1, c - 1), n = s.blurred(r - 1, c), ne = s.blurred(r - 1, c + 1);
        w = s.blurred(r, c - 1), e = s.blurred(r, c + 1);
        sw = s.blurred(r + 1, c - 1), so = s.blurred(r + 1, c), se = s.blurred(r + 1, c + 1);
      }
      double gx = (ne + 2 * e + se) - (nw + 2 * w + sw);
      double gy = (sw + 2 * so + se) - (nw + 2 * n + ne);
      s.magnitude(r, c) = std::min(1.0, std::sqrt(gx * gx + gy * gy) * inv_scale);
      if (gy < 0 || (gy == 0 && gx < 0)) gx = -gx, gy = -gy;
      const double ax = std::abs(gx);
      std::uint8_t bin;
      if (gy < t1 * ax) bin = 0;
      else if (gy >= t2 * ax) bin = 2;
      else bin = gx > 0 ? 1 : 3;
      s.direction(r, c) = bin;
    }
  }

  // Neighbour offsets (dr, dc) along the gradient for each direction bin.
  // Rows grow downward, so a 45 degree gradient points to (+1, +1).
  static constexpr int kStep[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
  auto mag = [&](Index r, Index c) {
    return (r < 0 || r >= rows || c < 0 || c >= cols) ? 0.0 : s.magnitude(r, c);
  };
  s.suppressed = Image::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const auto& d = kStep[s.direction(r, c)];
      const double m = s.magnitude(r, c);
      if (m >= mag(r + d[0], c + d[1]) && m >= mag(r - d[0], c - d[1])) s.suppressed(r, c) = m;
    }

  s.strong = (s.suppressed.array() >= config.high).cast<std::uint8_t>();
  s.weak = (s.suppressed.array() >= config.low && s.suppressed.array() < config.high).cast<std::uint8_t>();
  s.edges = s.strong;
  std::vector<std::pair<Index, Index>> stack;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      if (s.strong(r, c)) stack.emplace_back(r, c);
  while (!stack.empty()) {
    const auto [r, c] = stack.back();
    stack.pop_back();
    for (Index dr = -1; dr <= 1; ++dr)
      for (Index dc = -1; dc <= 1; ++dc) {
        const Index rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols || s.edges(rr, cc) || !s.weak(rr, cc)) continue;
        s.edges(rr, cc) = 1;
        stack.emplace_back(rr, cc);
      }
  }
  return s;
}

Mask canny(const Image& patch, const CannyConfig& config) { return canny_stages(patch, config).edges; }

Detection decide_canny(const Mask& edges, const Image& patch, const CannyConfig& config, int cell) {
  Detection d;
  d.activation_count = long(edges.cast<long>().sum());
  const double reference = config.reference_count(int(std::max(patch.rows(), patch.cols())));
  d.confidence = std::min(1.0, double(d.activation_count) / reference);
  d.present = d.confidence >= config.decision_threshold;
  d.cells = {cell};
  return d;
}

}  // namespace bridge::detect
