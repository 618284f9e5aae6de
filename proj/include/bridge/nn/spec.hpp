#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bridge/nn/tensor.hpp"

namespace bridge::nn {

struct Dense {
  Index in = 0;
  Index out = 0;
};

/// Valid-padding convolution: out = (in - kernel) / stride + 1.
struct Conv2D {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
};

/// Non-overlapping max pooling (stride = window); trailing rows/cols are dropped.
struct MaxPool {
  Index window = 2;
};

enum class Activation { ReLU, Softmax, Sigmoid };

struct Flatten {};

using Layer = std::variant<Dense, Conv2D, MaxPool, Activation, Flatten>;

/// Per-sample feature shape in CHW order. Flat vectors are {n, 1, 1}.
struct FeatureShape {
  Index channels = 0;
  Index height = 1;
  Index width = 1;

  Index size() const { return channels * height * width; }
  bool flat() const { return height == 1 && width == 1; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

struct NetworkSpec {
  FeatureShape input;
  std::vector<Layer> layers;
};

/// Shapes at every layer boundary: result[0] is the input, result[i + 1] the
/// output of layer i. Throws ShapeError naming the first layer that does not
/// compose.
std::vector<FeatureShape> layer_shapes(const NetworkSpec& spec);

FeatureShape output_shape(const NetworkSpec& spec);

/// Canonical text form, e.g. "in=1x64x64|conv(1,8,3,1)|relu|pool(2)|flatten|dense(3136,2)|softmax".
std::string describe(const NetworkSpec& spec);

/// FNV-1a 64 over describe(spec).
std::uint64_t fingerprint(const NetworkSpec& spec);

/// Multilayer perceptron: Dense + ReLU for each hidden width, then a linear head.
NetworkSpec mlp(Index inputs, const std::vector<Index>& hidden, Index outputs);

bool has_parameters(const Layer& layer);

}  // namespace bridge::nn
