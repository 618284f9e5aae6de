#include "bridge/nn/spec.hpp"

#include <random>
#include <sstream>

#include "bridge/hash.hpp"
#include "bridge/nn/network.hpp"

namespace bridge::nn {

namespace {

std::string dims(const FeatureShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

}  // namespace

std::vector<FeatureShape> layer_shapes(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ShapeError(0, "network has no layers");
  if (spec.input.size() <= 0) throw ShapeError(0, "input shape " + dims(spec.input) + " is empty");
  std::vector<FeatureShape> shapes{spec.input};
  shapes.reserve(spec.layers.size() + 1);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const FeatureShape in = shapes.back();
    FeatureShape out = in;
    std::visit(detail::overloaded{
                   [&](const Dense& d) {
                     if (!in.flat()) throw ShapeError(i, "dense layer needs a flat input, got " + dims(in));
                     if (d.in != in.channels || d.out <= 0)
                       throw ShapeError(i, "dense(" + std::to_string(d.in) + "," + std::to_string(d.out) +
                                               ") receives " + std::to_string(in.channels) + " features");
                     out = {d.out, 1, 1};
                   },
                   [&](const Conv2D& c) {
                     if (c.in_channels != in.channels || c.out_channels <= 0)
                       throw ShapeError(i, "conv expects " + std::to_string(c.in_channels) + " channels, got " +
                                               dims(in));
                     if (c.kernel < 1 || c.stride < 1 || c.kernel > in.height || c.kernel > in.width)
                       throw ShapeError(i, "conv kernel " + std::to_string(c.kernel) + " does not fit " + dims(in));
                     out = {c.out_channels, (in.height - c.kernel) / c.stride + 1,
                            (in.width - c.kernel) / c.stride + 1};
                   },
                   [&](const MaxPool& m) {
                     if (m.window < 1 || m.window > in.height || m.window > in.width)
                       throw ShapeError(i, "pool window " + std::to_string(m.window) + " does not fit " + dims(in));
                     out = {in.channels, in.height / m.window, in.width / m.window};
                   },
                   [&](Activation) {},
                   [&](const Flatten&) { out = {in.size(), 1, 1}; },
               },
               spec.layers[i]);
    shapes.push_back(out);
  }
  return shapes;
}

FeatureShape output_shape(const NetworkSpec& spec) { return layer_shapes(spec).back(); }

std::string describe(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "in=" << dims(spec.input);
  for (const auto& layer : spec.layers) {
    os << '|';
    std::visit(detail::overloaded{
                   [&](const Dense& d) { os << "dense(" << d.in << ',' << d.out << ')'; },
                   [&](const Conv2D& c) {
                     os << "conv(" << c.in_channels << ',' << c.out_channels << ',' << c.kernel << ',' << c.stride
                        << ')';
                   },
                   [&](const MaxPool& m) { os << "pool(" << m.window << ')'; },
                   [&](Activation a) {
                     os << (a == Activation::ReLU ? "relu" : a == Activation::Softmax ? "softmax" : "sigmoid");
                   },
                   [&](const Flatten&) { os << "flatten"; },
               },
               layer);
  }
  return os.str();
}

std::uint64_t fingerprint(const NetworkSpec& spec) { return fnv1a(describe(spec)); }

NetworkSpec mlp(Index inputs, const std::vector<Index>& hidden, Index outputs) {
  NetworkSpec spec{{inputs, 1, 1}, {}};
  Index prev = inputs;
  for (Index h : hidden) {
    spec.layers.emplace_back(Dense{prev, h});
    spec.layers.emplace_back(Activation::ReLU);
    prev = h;
  }
  spec.layers.emplace_back(Dense{prev, outputs});
  return spec;
}

bool has_parameters(const Layer& layer) {
  return std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2D>(layer);
}

Parameters init_params(const NetworkSpec& spec, std::uint64_t seed) {
  layer_shapes(spec);
  std::mt19937_64 rng(seed);
  Parameters params;
  params.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Index rows = 0, cols = 0;
    double fan_in = 0, fan_out = 0;
    if (const auto* d = std::get_if<Dense>(&spec.layers[i])) {
      rows = d->out, cols = d->in;
      fan_in = double(d->in), fan_out = double(d->out);
    } else if (const auto* c = std::get_if<Conv2D>(&spec.layers[i])) {
      const Index area = c->kernel * c->kernel;
      rows = c->out_channels, cols = c->in_channels * area;
      fan_in = double(c->in_channels * area), fan_out = double(c->out_channels * area);
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto& p = params.layers[i];
    p.weight.resize(rows, cols);
    for (Index j = 0; j < p.weight.size(); ++j) p.weight.data()[j] = dist(rng);
    p.bias = VectorX<double>::Zero(rows);
  }
  return params;
}

}  // namespace bridge::nn
