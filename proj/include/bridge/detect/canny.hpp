#pragma once

#include "bridge/detect/detection.hpp"
#include "bridge/render/patch.hpp"

namespace bridge::detect {

using render::Image;
using render::Mask;

struct CannyConfig {
  int kernel_size = 5;
  double sigma = 1.0;
  /// Hysteresis thresholds on the normalised gradient magnitude.
  double low = 0.1;
  double high = 0.3;
  double decision_threshold = 0.6;
  /// Sobel magnitude that maps to 1.0 (a unit step gives 4). A fixed scale
  /// keeps the thresholds absolute, so flat noisy patches stay quiet.
  double gradient_scale = 1.5;
  /// The edge count that saturates confidence is 2 * side * reference_fraction.
  double reference_fraction = 0.1;

  double reference_count(int side) const { return 2.0 * side * reference_fraction; }
};

/// Throws ConfigError.
void validate(const CannyConfig& config);

/// Every intermediate image of the pipeline, for inspection and tests.
struct CannyStages {
  Image blurred;
  Image magnitude;  // normalised to [0, 1]
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> direction;  // 0..3 = 0/45/90/135 deg
  Image suppressed;  // magnitude after non-maximum suppression
  Mask strong;
  Mask weak;   // low <= m < high, after suppression
  Mask edges;  // strong plus weak pixels 8-connected to a strong pixel
};

/// Gaussian blur, Sobel gradients, non-maximum suppression along the
/// quantised gradient direction, double threshold, hysteresis. Borders
/// replicate the edge pixel. Throws ConfigError if the patch is smaller than
/// the kernel.
CannyStages canny_stages(const Image& patch, const CannyConfig& config);
Mask canny(const Image& patch, const CannyConfig& config);

/// confidence = min(1, edge count / reference count); present iff
/// confidence >= decision threshold. cell is the scanned cell.
Detection decide_canny(const Mask& edges, const Image& patch, const CannyConfig& config, int cell = 0);

}  // namespace bridge::detect
