#pragma once

#include <vector>

namespace bridge::detect {

/// A detector verdict for one scanned cell. present <=> confidence >= the
/// detector's decision threshold.
struct Detection {
  bool present = false;
  double confidence = 0.0;
  long activation_count = 0;  // edge pixels (Canny) or 0
  std::vector<int> cells;     // row-major cell indices implicated
};

}  // namespace bridge::detect
