#include "bridge/nn/adam.hpp"

#include <cmath>

namespace bridge::nn {

AdamState make_adam(const Parameters& params, double learning_rate, double beta1, double beta2, double epsilon) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw ShapeError(0, "adam: parameter, gradient and moment shapes disagree");
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    if (!grads.layers[i].weight.allFinite() || !grads.layers[i].bias.allFinite())
      throw NumericError(i, "non-finite gradient passed to adam");
  }

  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  const double lr = state.learning_rate, eps = state.epsilon;

  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads.layers[i].weight, state.m.layers[i].weight, state.v.layers[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias, state.v.layers[i].bias);
  }
}

void clip_elementwise(Parameters& grads, double bound) {
  for (auto& l : grads.layers) {
    l.weight = l.weight.cwiseMax(-bound).cwiseMin(bound);
    l.bias = l.bias.cwiseMax(-bound).cwiseMin(bound);
  }
}

}  // namespace bridge::nn
