#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bridge/nn/spec.hpp"

namespace bridge::nn {

template <typename Scalar>
struct LayerParams {
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;

  friend bool operator==(const LayerParams& a, const LayerParams& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.bias.size() == b.bias.size() && a.weight == b.weight && a.bias == b.bias;
  }
};

/// Weights and biases for every layer; parameterless layers hold empty blocks.
/// Dense weights are out x in. Conv weights are out_channels x (in_channels*k*k)
/// with the column index (c * k + ky) * k + kx.
template <typename Scalar>
struct BasicParameters {
  std::vector<LayerParams<Scalar>> layers;

  Index count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool same_shape(const BasicParameters& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
          layers[i].weight.cols() != other.layers[i].weight.cols() ||
          layers[i].bias.size() != other.layers[i].bias.size())
        return false;
    }
    return true;
  }

  BasicParameters zeros_like() const {
    BasicParameters z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers)
      z.layers.push_back({MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                          VectorX<Scalar>::Zero(l.bias.size())});
    return z;
  }

  template <typename Other>
  BasicParameters<Other> cast() const {
    BasicParameters<Other> c;
    c.layers.reserve(layers.size());
    for (const auto& l : layers)
      c.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
    return c;
  }

  /// Visits every scalar in layer order (weights column-major, then bias).
  template <typename F>
  void for_each_value(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (Index j = 0; j < layers[i].weight.size(); ++j) f(i, layers[i].weight.data()[j]);
      for (Index j = 0; j < layers[i].bias.size(); ++j) f(i, layers[i].bias.data()[j]);
    }
  }

  template <typename F>
  void for_each_value(F&& f) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (Index j = 0; j < layers[i].weight.size(); ++j) f(i, layers[i].weight.data()[j]);
      for (Index j = 0; j < layers[i].bias.size(); ++j) f(i, layers[i].bias.data()[j]);
    }
  }

  friend bool operator==(const BasicParameters&, const BasicParameters&) = default;
};

using Parameters = BasicParameters<double>;

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
Parameters init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Throws ShapeError if params do not match the spec's layer shapes.
template <typename Scalar>
void check_params(const NetworkSpec& spec, const BasicParameters<Scalar>& params);

template <typename Scalar>
struct ForwardCache {
  std::uint64_t fingerprint = 0;
  /// activations[i] is the input to layer i; activations.back() is the output.
  std::vector<MatrixX<Scalar>> activations;
  std::vector<Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>> pool_argmax;

  Index batch() const { return activations.empty() ? 0 : activations.front().cols(); }
};

template <typename Scalar>
struct Gradients {
  BasicParameters<Scalar> params;
  MatrixX<Scalar> input;
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* x, const FeatureShape& in, const Conv2D& conv, const FeatureShape& out,
            MatrixX<Scalar>& cols) {
  const Index k = conv.kernel, s = conv.stride;
  cols.resize(out.height * out.width, in.channels * k * k);
  for (Index c = 0; c < in.channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.col((c * k + ky) * k + kx).data();
        const Scalar* plane = x + c * in.height * in.width;
        for (Index oy = 0; oy < out.height; ++oy) {
          const Scalar* row = plane + (oy * s + ky) * in.width + kx;
          for (Index ox = 0; ox < out.width; ++ox) *dst++ = row[ox * s];
        }
      }
}

template <typename Scalar>
void col2im_add(const MatrixX<Scalar>& cols, const FeatureShape& in, const Conv2D& conv,
                const FeatureShape& out, Scalar* dx) {
  const Index k = conv.kernel, s = conv.stride;
  for (Index c = 0; c < in.channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.col((c * k + ky) * k + kx).data();
        Scalar* plane = dx + c * in.height * in.width;
        for (Index oy = 0; oy < out.height; ++oy) {
          Scalar* row = plane + (oy * s + ky) * in.width + kx;
          for (Index ox = 0; ox < out.width; ++ox) row[ox * s] += *src++;
        }
      }
}

template <typename Scalar>
void softmax_columns(MatrixX<Scalar>& z) {
  using std::exp;
  for (Index n = 0; n < z.cols(); ++n) {
    auto col = z.col(n);
    const Scalar m = col.maxCoeff();
    col = (col.array() - m).exp();
    col /= col.sum();
  }
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace detail

template <typename Scalar>
void check_params(const NetworkSpec& spec, const BasicParameters<Scalar>& params) {
  const auto shapes = layer_shapes(spec);
  if (params.layers.size() != spec.layers.size())
    throw ShapeError(params.layers.size(), "parameter set has " + std::to_string(params.layers.size()) +
                                               " layers, spec has " + std::to_string(spec.layers.size()));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Index rows = 0, cols = 0, bias = 0;
    std::visit(detail::overloaded{
                   [&](const Dense& d) { rows = d.out, cols = d.in, bias = d.out; },
                   [&](const Conv2D& c) {
                     rows = c.out_channels, cols = c.in_channels * c.kernel * c.kernel, bias = c.out_channels;
                   },
                   [](const auto&) {}},
               spec.layers[i]);
    const auto& p = params.layers[i];
    if (p.weight.rows() != rows || p.weight.cols() != cols || p.bias.size() != bias)
      throw ShapeError(i, "parameter block " + std::to_string(p.weight.rows()) + "x" +
                              std::to_string(p.weight.cols()) + " does not match expected " +
                              std::to_string(rows) + "x" + std::to_string(cols));
  }
}

namespace detail {
template <typename Scalar>
MatrixX<Scalar> forward_layers(const NetworkSpec& spec, const std::vector<FeatureShape>& shapes,
                               const BasicParameters<Scalar>& params, const MatrixX<Scalar>& input,
                               std::size_t first, ForwardCache<Scalar>* cache);
}  // namespace detail

/// Runs a batch (one sample per column) through the network. When cache is
/// non-null it receives everything backward() needs.
template <typename Scalar>
MatrixX<Scalar> forward(const NetworkSpec& spec, const BasicParameters<Scalar>& params,
                        const MatrixX<Scalar>& input, ForwardCache<Scalar>* cache = nullptr) {
  const auto shapes = layer_shapes(spec);
  if (params.layers.size() != spec.layers.size())
    throw ShapeError(0, "parameter layer count does not match spec");
  if (input.rows() != shapes.front().size())
    throw ShapeError(0, "input has " + std::to_string(input.rows()) + " features, expected " +
                            std::to_string(shapes.front().size()));
  if (cache) {
    cache->fingerprint = fingerprint(spec);
    cache->activations.clear();
    cache->activations.reserve(spec.layers.size() + 1);
    cache->activations.push_back(input);
    cache->pool_argmax.assign(spec.layers.size(), {});
  }
  return detail::forward_layers(spec, shapes, params, input, 0, cache);
}

/// Re-runs layers first.. from cache.activations[first], leaving the cached
/// state of earlier layers untouched. Used when only parameters of layer
/// first or later have changed since the cache was filled.
template <typename Scalar>
MatrixX<Scalar> resume_forward(const NetworkSpec& spec, const BasicParameters<Scalar>& params,
                               ForwardCache<Scalar>& cache, std::size_t first) {
  if (cache.fingerprint != fingerprint(spec) || first >= cache.activations.size() ||
      cache.activations.size() != spec.layers.size() + 1)
    throw StateError("forward cache does not belong to this network");
  if (params.layers.size() != spec.layers.size())
    throw ShapeError(0, "parameter layer count does not match spec");
  cache.activations.resize(first + 1);
  const MatrixX<Scalar> x = cache.activations[first];
  return detail::forward_layers(spec, layer_shapes(spec), params, x, first, &cache);
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> forward_layers(const NetworkSpec& spec, const std::vector<FeatureShape>& shapes,
                               const BasicParameters<Scalar>& params, const MatrixX<Scalar>& input,
                               std::size_t first, ForwardCache<Scalar>* cache) {
  const Index batch = input.cols();
  MatrixX<Scalar> x = input;
  for (std::size_t i = first; i < spec.layers.size(); ++i) {
    const FeatureShape& in = shapes[i];
    const FeatureShape& out = shapes[i + 1];
    const auto& p = params.layers[i];
    MatrixX<Scalar> y;
    std::visit(
        detail::overloaded{
            [&](const Dense& d) {
              if (p.weight.rows() != d.out || p.weight.cols() != d.in || p.bias.size() != d.out)
                throw ShapeError(i, "dense parameters do not match layer");
              y.noalias() = p.weight * x;
              y.colwise() += p.bias;
            },
            [&](const Conv2D& c) {
              if (p.weight.rows() != c.out_channels || p.weight.cols() != c.in_channels * c.kernel * c.kernel)
                throw ShapeError(i, "conv parameters do not match layer");
              y.resize(out.size(), batch);
              MatrixX<Scalar> cols;
              const Index positions = out.height * out.width;
              for (Index n = 0; n < batch; ++n) {
                detail::im2col(x.col(n).data(), in, c, out, cols);
                Eigen::Map<MatrixX<Scalar>> o(y.col(n).data(), positions, c.out_channels);
                o.noalias() = cols * p.weight.transpose();
                o.rowwise() += p.bias.transpose();
              }
            },
            [&](const MaxPool& m) {
              y.resize(out.size(), batch);
              Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> arg(out.size(), batch);
              for (Index n = 0; n < batch; ++n) {
                const Scalar* src = x.col(n).data();
                Index o = 0;
                for (Index ch = 0; ch < out.channels; ++ch)
                  for (Index oy = 0; oy < out.height; ++oy)
                    for (Index ox = 0; ox < out.width; ++ox, ++o) {
                      Index best = ch * in.height * in.width + (oy * m.window) * in.width + ox * m.window;
                      for (Index dy = 0; dy < m.window; ++dy)
                        for (Index dx = 0; dx < m.window; ++dx) {
                          const Index idx =
                              ch * in.height * in.width + (oy * m.window + dy) * in.width + ox * m.window + dx;
                          if (src[idx] > src[best]) best = idx;
                        }
                      y(o, n) = src[best];
                      arg(o, n) = best;
                    }
              }
              if (cache) cache->pool_argmax[i] = std::move(arg);
            },
            [&](Activation a) {
              switch (a) {
                case Activation::ReLU:
                  y = x.cwiseMax(Scalar(0));
                  break;
                case Activation::Sigmoid:
                  y = (Scalar(1) + (-x.array()).exp()).inverse().matrix();
                  break;
                case Activation::Softmax:
                  y = x;
                  detail::softmax_columns(y);
                  break;
              }
            },
            [&](const Flatten&) { y = x; },
        },
        spec.layers[i]);
    if (cache) cache->activations.push_back(y);
    x = std::move(y);
  }
  return x;
}

}  // namespace detail

/// Backpropagates upstream (d loss / d output) through a cached forward pass.
/// Throws StateError if the cache was produced by a different spec or batch.
template <typename Scalar>
Gradients<Scalar> backward(const NetworkSpec& spec, const BasicParameters<Scalar>& params,
                           const ForwardCache<Scalar>& cache, const MatrixX<Scalar>& upstream,
                           bool need_input_gradient = true) {
  if (cache.activations.size() != spec.layers.size() + 1 || cache.fingerprint != fingerprint(spec))
    throw StateError("forward cache does not belong to this network");
  const auto shapes = layer_shapes(spec);
  const Index batch = cache.batch();
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (cache.activations[i].rows() != shapes[i].size() || cache.activations[i].cols() != batch)
      throw StateError("forward cache is stale: activation " + std::to_string(i) + " has wrong shape");
  if (upstream.rows() != shapes.back().size() || upstream.cols() != batch)
    throw StateError("upstream gradient is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", expected " + std::to_string(shapes.back().size()) +
                     "x" + std::to_string(batch));
  check_params(spec, params);

  Gradients<Scalar> grads;
  grads.params = params.zeros_like();
  MatrixX<Scalar> g = upstream;

  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const FeatureShape& in = shapes[li];
    const FeatureShape& out = shapes[li + 1];
    const MatrixX<Scalar>& x = cache.activations[li];
    const MatrixX<Scalar>& y = cache.activations[li + 1];
    const auto& p = params.layers[li];
    auto& gp = grads.params.layers[li];
    const bool need_dx = need_input_gradient || li > 0;
    std::visit(
        detail::overloaded{
            [&](const Dense&) {
              gp.weight.noalias() = g * x.transpose();
              gp.bias = g.rowwise().sum();
              if (need_dx) {
                MatrixX<Scalar> dx = p.weight.transpose() * g;
                g = std::move(dx);
              }
            },
            [&](const Conv2D& c) {
              const Index positions = out.height * out.width;
              MatrixX<Scalar> dx;
              if (need_dx) dx = MatrixX<Scalar>::Zero(in.size(), batch);
              MatrixX<Scalar> cols, dcols;
              for (Index n = 0; n < batch; ++n) {
                detail::im2col(x.col(n).data(), in, c, out, cols);
                Eigen::Map<const MatrixX<Scalar>> dout(g.col(n).data(), positions, c.out_channels);
                gp.weight.noalias() += dout.transpose() * cols;
                gp.bias += dout.colwise().sum().transpose();
                if (need_dx) {
                  dcols.noalias() = dout * p.weight;
                  detail::col2im_add(dcols, in, c, out, dx.col(n).data());
                }
              }
              g = std::move(dx);
            },
            [&](const MaxPool&) {
              const auto& arg = cache.pool_argmax[li];
              if (arg.rows() != out.size() || arg.cols() != batch)
                throw StateError("forward cache is stale: missing pooling indices");
              MatrixX<Scalar> dx = MatrixX<Scalar>::Zero(in.size(), batch);
              for (Index n = 0; n < batch; ++n)
                for (Index o = 0; o < out.size(); ++o) dx(arg(o, n), n) += g(o, n);
              g = std::move(dx);
            },
            [&](Activation a) {
              switch (a) {
                case Activation::ReLU:
                  g = (x.array() > Scalar(0)).select(g, Scalar(0));
                  break;
                case Activation::Sigmoid:
                  g = (g.array() * y.array() * (Scalar(1) - y.array())).matrix();
                  break;
                case Activation::Softmax:
                  for (Index n = 0; n < batch; ++n) {
                    const Scalar dot = y.col(n).dot(g.col(n));
                    g.col(n) = (y.col(n).array() * (g.col(n).array() - dot)).matrix();
                  }
                  break;
              }
            },
            [&](const Flatten&) {},
        },
        spec.layers[li]);
  }
  if (need_input_gradient) grads.input = std::move(g);
  return grads;
}

template <typename Scalar>
struct ForwardResult {
  BasicTensor<Scalar> output;
  ForwardCache<Scalar> cache;
};

/// Tensor entry point. The input is either one sample (any shape whose
/// product is the input feature count) or a batch {N, ...}.
template <typename Scalar>
ForwardResult<Scalar> forward(const NetworkSpec& spec, const BasicParameters<Scalar>& params,
                              const BasicTensor<Scalar>& input) {
  const Index features = layer_shapes(spec).front().size();
  const Index out_features = output_shape(spec).size();
  if (features == 0 || input.size() % features != 0 || input.size() == 0)
    throw ShapeError(0, "input tensor with " + std::to_string(input.size()) +
                            " values is not a whole number of samples of " + std::to_string(features));
  const Index batch = input.size() / features;
  const bool batched = batch != 1 || input.size() != features;
  Eigen::Map<const MatrixX<Scalar>> x(input.values.data(), features, batch);
  ForwardResult<Scalar> r;
  MatrixX<Scalar> y = forward(spec, params, MatrixX<Scalar>(x), &r.cache);
  auto shape = batched ? std::vector<Index>{batch, out_features} : std::vector<Index>{out_features};
  r.output = BasicTensor<Scalar>(std::move(shape), Eigen::Map<VectorX<Scalar>>(y.data(), y.size()));
  return r;
}

template <typename Scalar>
Gradients<Scalar> backward(const NetworkSpec& spec, const BasicParameters<Scalar>& params,
                           const ForwardCache<Scalar>& cache, const BasicTensor<Scalar>& upstream) {
  const Index out_features = output_shape(spec).size();
  if (out_features == 0 || upstream.size() != out_features * cache.batch())
    throw StateError("upstream gradient does not match the cached forward pass");
  Eigen::Map<const MatrixX<Scalar>> g(upstream.values.data(), out_features, cache.batch());
  return backward(spec, params, cache, MatrixX<Scalar>(g));
}

}  // namespace bridge::nn
