#pragma once

#include <cstdint>

#include "bridge/nn/network.hpp"

namespace bridge::nn {

struct AdamState {
  Parameters m;
  Parameters v;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Zero moments shaped like params.
AdamState make_adam(const Parameters& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                    double epsilon = 1e-8);

/// One bias-corrected Adam update, in place. Gradients are validated before
/// anything is touched: a non-finite entry raises NumericError naming the
/// layer and leaves params and state unchanged.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state);

/// Clamps every gradient component to [-bound, bound].
void clip_elementwise(Parameters& grads, double bound);

}  // namespace bridge::nn
