#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bridge/nn/network.hpp"

namespace bridge::nn {

/// Mean negative log-likelihood over a batch of probability columns (network
/// ends in Softmax). targets[n] is the class of sample n.
struct NllLoss {
  std::vector<Index> targets;

  template <typename Scalar>
  Scalar value(const MatrixX<Scalar>& probs) const {
    using std::log;
    Scalar total(0);
    for (Index n = 0; n < probs.cols(); ++n) total -= log(probs(targets.at(std::size_t(n)), n));
    return total / Scalar(probs.cols());
  }

  MatrixX<double> gradient(const MatrixX<double>& probs) const {
    MatrixX<double> g = MatrixX<double>::Zero(probs.rows(), probs.cols());
    for (Index n = 0; n < probs.cols(); ++n) {
      const Index t = targets.at(std::size_t(n));
      g(t, n) = -1.0 / (probs(t, n) * double(probs.cols()));
    }
    return g;
  }
};

/// Softmax cross-entropy applied to raw logits.
struct SoftmaxCrossEntropyLoss {
  std::vector<Index> targets;

  template <typename Scalar>
  Scalar value(const MatrixX<Scalar>& logits) const {
    MatrixX<Scalar> p = logits;
    detail::softmax_columns(p);
    return NllLoss{targets}.value(p);
  }

  MatrixX<double> gradient(const MatrixX<double>& logits) const {
    MatrixX<double> p = logits;
    detail::softmax_columns(p);
    for (Index n = 0; n < p.cols(); ++n) p(targets.at(std::size_t(n)), n) -= 1.0;
    return p / double(p.cols());
  }
};

/// sum(weights .* output): a loss with a constant, known output gradient.
struct LinearLoss {
  MatrixX<double> weights;

  template <typename Scalar>
  Scalar value(const MatrixX<Scalar>& out) const {
    return (weights.template cast<Scalar>().array() * out.array()).sum();
  }
  MatrixX<double> gradient(const MatrixX<double>&) const { return weights; }
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_layer = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index parameters_checked = 0;
  /// Parameters whose step had to be shrunk to stay on one side of every
  /// ReLU / max-pool switch.
  Index kink_retries = 0;
};

namespace detail {

/// Hash of the piecewise-linear regime of a forward pass: which ReLU inputs
/// are positive and which element each pooling window selected, for layers
/// first and later.
inline std::uint64_t regime_hash(const NetworkSpec& spec, const ForwardCache<double>& cache, std::size_t first = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
  for (std::size_t i = first; i < spec.layers.size(); ++i) {
    if (const auto* a = std::get_if<Activation>(&spec.layers[i]); a && *a == Activation::ReLU) {
      const auto& x = cache.activations[i];
      for (Index j = 0; j < x.size(); ++j) mix(x.data()[j] > 0.0 ? 1 : 2);
    } else if (std::holds_alternative<MaxPool>(spec.layers[i])) {
      const auto& arg = cache.pool_argmax[i];
      for (Index j = 0; j < arg.size(); ++j) mix(std::uint64_t(arg.data()[j]));
    }
  }
  return h;
}

}  // namespace detail

/// Compares backward() against central differences of loss.value() for every
/// parameter. Relative error is |a - n| / max(|a|, |n|, 1e-12).
///
/// The loss is piecewise smooth when the network has ReLU or max-pool layers.
/// If theta +- h lands in a different regime than theta, h is divided by 10
/// (at most three times) so the difference quotient measures the same smooth
/// piece the analytic gradient comes from.
template <typename Loss>
GradientCheckReport gradient_check(const NetworkSpec& spec, const Parameters& params, const Loss& loss,
                                   const MatrixX<double>& input, double perturbation = 1e-6) {
  ForwardCache<double> cache;
  const MatrixX<double> out = forward(spec, params, input, &cache);
  const Gradients<double> analytic = backward(spec, params, cache, loss.gradient(out));
  std::uint64_t base_regime = 0;

  GradientCheckReport report;
  Parameters probe = params;
  ForwardCache<double> probe_cache = cache;
  std::size_t layer = 0;
  // Perturbing layer `layer` leaves everything before it as in the base pass,
  // so only the remaining layers are recomputed.
  auto evaluate = [&](double& theta, double value, std::uint64_t& regime) {
    theta = value;
    const double l = loss.value(resume_forward(spec, probe, probe_cache, layer));
    regime = detail::regime_hash(spec, probe_cache, layer);
    return l;
  };

  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    layer = li;
    probe_cache = cache;  // the last probe of layer li - 1 left perturbed activations behind
    base_regime = detail::regime_hash(spec, cache, li);
    auto check_block = [&](auto& block, const auto& grad_block) {
      for (Index j = 0; j < block.size(); ++j) {
        double& theta = block.data()[j];
        const double saved = theta;
        double h = perturbation;
        double numeric = 0.0;
        for (int attempt = 0; attempt < 4; ++attempt) {
          std::uint64_t r_up = 0, r_down = 0;
          const double up = evaluate(theta, saved + h, r_up);
          const double down = evaluate(theta, saved - h, r_down);
          numeric = (up - down) / (2.0 * h);
          if (r_up == base_regime && r_down == base_regime) break;
          if (attempt < 3) {
            ++report.kink_retries;
            h /= 10.0;
          }
        }
        theta = saved;
        const double a = grad_block.data()[j];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        const double err = std::abs(a - numeric) / denom;
        ++report.parameters_checked;
        if (err > report.max_relative_error) {
          report.max_relative_error = err;
          report.worst_layer = li;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    };
    check_block(probe.layers[li].weight, analytic.params.layers[li].weight);
    check_block(probe.layers[li].bias, analytic.params.layers[li].bias);
  }
  return report;
}

template <typename Loss>
GradientCheckReport gradient_check(const NetworkSpec& spec, const Parameters& params, const Loss& loss,
                                   const Tensor& input, double perturbation = 1e-6) {
  const Index features = layer_shapes(spec).front().size();
  if (features == 0 || input.size() % features != 0) throw ShapeError(0, "input is not a whole batch");
  Eigen::Map<const MatrixX<double>> x(input.values.data(), features, input.size() / features);
  return gradient_check(spec, params, loss, MatrixX<double>(x), perturbation);
}

}  // namespace bridge::nn
