#include <cmath>
#include <filesystem>
#include <random>

#include "bridge/hash.hpp"
#include "bridge/io.hpp"
#include "bridge/nn/adam.hpp"
#include "bridge/nn/gradcheck.hpp"
#include "bridge/nn/serialize.hpp"
#include "doctest.h"

using namespace bridge;
using namespace bridge::nn;

namespace {

MatrixX<double> random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  MatrixX<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

NetworkSpec conv_classifier(Index side) {
  return NetworkSpec{{1, side, side},
                     {Conv2D{1, 8, 3, 1}, Activation::ReLU, MaxPool{2}, Conv2D{8, 16, 3, 1}, Activation::ReLU,
                      MaxPool{2}, Flatten{}, Dense{16 * (((side - 2) / 2 - 2) / 2) * (((side - 2) / 2 - 2) / 2), 2},
                      Activation::Softmax}};
}

}  // namespace

TEST_CASE("dense identity weights pass the input through") {
  NetworkSpec spec{{3, 1, 1}, {Dense{3, 3}}};
  Parameters p = init_params(spec, 1);
  p.layers[0].weight = MatrixX<double>::Identity(3, 3);
  p.layers[0].bias.setZero();
  Tensor x({3}, (VectorX<double>(3) << 0.5, -2.0, 7.25).finished());
  auto r = forward(spec, p, x);
  CHECK(r.output.shape == std::vector<Index>{3});
  CHECK(r.output.values == x.values);
}

TEST_CASE("softmax of equal logits is uniform") {
  NetworkSpec spec{{2, 1, 1}, {Activation::Softmax}};
  Parameters p = init_params(spec, 0);
  auto r = forward(spec, p, Tensor({2}, VectorX<double>::Zero(2)));
  CHECK(r.output.values(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.output.values(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("1x1 unit convolution is the identity") {
  NetworkSpec spec{{1, 5, 4}, {Conv2D{1, 1, 1, 1}}};
  Parameters p = init_params(spec, 0);
  p.layers[0].weight.setOnes();
  p.layers[0].bias.setZero();
  MatrixX<double> x = random_matrix(20, 1, 3);
  CHECK(forward(spec, p, x) == x);
}

TEST_CASE("shape mismatches are rejected with the layer index") {
  NetworkSpec bad{{4, 1, 1}, {Dense{4, 8}, Activation::ReLU, Dense{7, 2}}};
  try {
    layer_shapes(bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.layer() == 2);
  }
  NetworkSpec spec = mlp(4, {8}, 2);
  Parameters p = init_params(spec, 0);
  CHECK_THROWS_AS(forward(spec, p, MatrixX<double>(5, 1)), ShapeError);
  CHECK_THROWS_AS(layer_shapes(NetworkSpec{{1, 4, 4}, {Conv2D{1, 2, 5, 1}}}), ShapeError);
  CHECK_THROWS_AS(layer_shapes(NetworkSpec{{1, 4, 4}, {}}), ShapeError);
}

TEST_CASE("linear layer weight gradient is g x^T") {
  NetworkSpec spec{{3, 1, 1}, {Dense{3, 2}}};
  Parameters p = init_params(spec, 5);
  MatrixX<double> x = random_matrix(3, 1, 7);
  MatrixX<double> g = random_matrix(2, 1, 8);
  ForwardCache<double> cache;
  forward(spec, p, x, &cache);
  auto grads = backward(spec, p, cache, g);
  MatrixX<double> expected = g * x.transpose();
  CHECK((grads.params.layers[0].weight - expected).cwiseAbs().maxCoeff() == 0.0);
  CHECK((grads.params.layers[0].bias - g).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("relu blocks gradient at negative pre-activation") {
  NetworkSpec spec{{2, 1, 1}, {Activation::ReLU}};
  Parameters p = init_params(spec, 0);
  MatrixX<double> x(2, 1);
  x << -0.3, 0.4;
  ForwardCache<double> cache;
  forward(spec, p, x, &cache);
  auto grads = backward(spec, p, cache, MatrixX<double>(MatrixX<double>::Ones(2, 1)));
  CHECK(grads.input(0, 0) == 0.0);
  CHECK(grads.input(1, 0) == 1.0);
}

TEST_CASE("stale or mismatched caches are rejected") {
  NetworkSpec spec = mlp(4, {8}, 2);
  NetworkSpec other = mlp(4, {6}, 2);
  Parameters p = init_params(spec, 0);
  ForwardCache<double> cache;
  forward(spec, p, random_matrix(4, 3, 1), &cache);
  CHECK_THROWS_AS(backward(other, init_params(other, 0), cache, MatrixX<double>(MatrixX<double>::Ones(2, 3))), StateError);
  CHECK_THROWS_AS(backward(spec, p, cache, MatrixX<double>(MatrixX<double>::Ones(2, 2))), StateError);
  ForwardCache<double> empty;
  CHECK_THROWS_AS(backward(spec, p, empty, MatrixX<double>(MatrixX<double>::Ones(2, 3))), StateError);
}

TEST_CASE("conv gradient matches central differences on an 8x8 input") {
  NetworkSpec spec{{2, 8, 8}, {Conv2D{2, 3, 3, 1}}};
  Parameters p = init_params(spec, 11);
  p.layers[0].bias = random_matrix(3, 1, 12);
  MatrixX<double> x = random_matrix(128, 1, 13);
  LinearLoss loss{random_matrix(3 * 36, 1, 14)};
  auto report = gradient_check(spec, p, loss, x, 1e-6);
  CHECK(report.max_relative_error <= 1e-5);

  // Input gradient against the same oracle.
  ForwardCache<double> cache;
  forward(spec, p, x, &cache);
  auto grads = backward(spec, p, cache, loss.weights);
  double worst = 0;
  for (Index i = 0; i < x.size(); ++i) {
    MatrixX<double> up = x, down = x;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double numeric = (loss.value(forward(spec, p, up)) - loss.value(forward(spec, p, down))) / 2e-6;
    const double a = grads.input(i);
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12}));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("strided convolution output size and gradient") {
  NetworkSpec spec{{1, 9, 9}, {Conv2D{1, 2, 3, 2}}};
  CHECK(output_shape(spec) == FeatureShape{2, 4, 4});
  Parameters p = init_params(spec, 2);
  auto report = gradient_check(spec, p, LinearLoss{random_matrix(32, 1, 3)}, random_matrix(81, 1, 4), 1e-6);
  CHECK(report.max_relative_error <= 1e-5);
}

TEST_CASE("adam first step moves by the learning rate") {
  NetworkSpec spec{{1, 1, 1}, {Dense{1, 1}}};
  Parameters p = init_params(spec, 0);
  p.layers[0].weight(0, 0) = 0.7;
  Parameters g = p.zeros_like();
  g.layers[0].weight(0, 0) = 1.0;
  AdamState s = make_adam(p, 0.01, 0.9, 0.999, 1e-8);
  adam_step(p, g, s);
  CHECK(s.step == 1);
  CHECK(0.7 - p.layers[0].weight(0, 0) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam with zero gradients") {
  NetworkSpec spec = mlp(3, {4}, 2);
  Parameters p = init_params(spec, 9);
  const Parameters original = p;
  AdamState s = make_adam(p, 0.01);
  adam_step(p, p.zeros_like(), s);
  CHECK(p == original);

  SUBCASE("moments decay toward zero") {
    Parameters g = p.zeros_like();
    g.layers[0].weight.setConstant(0.5);
    adam_step(p, g, s);
    const double m1 = s.m.layers[0].weight(0, 0), v1 = s.v.layers[0].weight(0, 0);
    adam_step(p, p.zeros_like(), s);
    CHECK(std::abs(s.m.layers[0].weight(0, 0)) < std::abs(m1));
    CHECK(s.v.layers[0].weight(0, 0) < v1);
    CHECK(s.step == 3);
  }
}

TEST_CASE("adam descends theta^2 below 0.1 within 500 steps") {
  NetworkSpec spec{{1, 1, 1}, {Dense{1, 1}}};
  Parameters p = init_params(spec, 0);
  p.layers[0].weight(0, 0) = 1.0;
  AdamState s = make_adam(p, 0.01);
  int steps = 0;
  while (std::abs(p.layers[0].weight(0, 0)) >= 0.1 && steps < 500) {
    Parameters g = p.zeros_like();
    g.layers[0].weight(0, 0) = 2.0 * p.layers[0].weight(0, 0);
    adam_step(p, g, s);
    ++steps;
  }
  CHECK(std::abs(p.layers[0].weight(0, 0)) < 0.1);
  CHECK(steps <= 500);
}

TEST_CASE("adam rejects non-finite gradients and names the layer") {
  NetworkSpec spec = mlp(3, {4}, 2);
  Parameters p = init_params(spec, 9);
  const Parameters original = p;
  AdamState s = make_adam(p, 0.01);
  Parameters g = p.zeros_like();
  g.layers[2].bias(1) = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(p, g, s);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer() == 2);
  }
  CHECK(p == original);
  CHECK(s.step == 0);
}

TEST_CASE("gradient_check: MLP 4-8-2 with softmax cross-entropy") {
  NetworkSpec spec = mlp(4, {8}, 2);
  spec.layers.emplace_back(Activation::Softmax);
  Parameters p = init_params(spec, 21);
  auto report = gradient_check(spec, p, NllLoss{{0, 1, 1}}, random_matrix(4, 3, 22), 1e-6);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("gradient_check: all-zero parameters with symmetric loss") {
  NetworkSpec spec = mlp(4, {8}, 2);
  spec.layers.emplace_back(Activation::Softmax);
  Parameters p = init_params(spec, 0).zeros_like();
  auto report = gradient_check(spec, p, NllLoss{{0, 1}}, random_matrix(4, 2, 5), 1e-6);
  CHECK(report.max_relative_error <= 1e-6);
}

TEST_CASE("gradient_check: conv-pool-dense classifier on a 32x32 patch") {
  NetworkSpec spec = conv_classifier(32);
  Parameters p = init_params(spec, 31);
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixX<double> x(32 * 32, 1);
  for (Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  auto report = gradient_check(spec, p, NllLoss{{1}}, x, 1e-6);
  CAPTURE(report.worst_layer);
  CAPTURE(report.worst_analytic);
  CAPTURE(report.worst_numeric);
  CHECK(report.max_relative_error <= 1e-3);
}

TEST_CASE("property: analytic gradients match finite differences per layer type (100 trials)") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> kind(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = trial % 5;
    NetworkSpec spec;
    bool dense_only = false;
    switch (k) {
      case 0:
        spec = mlp(5, {6}, 3);
        dense_only = true;
        break;
      case 1:
        spec = NetworkSpec{{2, 6, 6}, {Conv2D{2, 3, 3, 1}, Flatten{}, Dense{48, 2}}};
        break;
      case 2:
        spec = NetworkSpec{{2, 6, 6}, {MaxPool{2}, Flatten{}, Dense{18, 2}}};
        break;
      case 3:
        spec = NetworkSpec{{4, 1, 1}, {Dense{4, 5}, Activation::Sigmoid, Dense{5, 3}, Activation::Softmax}};
        dense_only = true;
        break;
      default:
        spec = NetworkSpec{{4, 1, 1}, {Dense{4, 6}, Activation::ReLU, Dense{6, 2}}};
        dense_only = true;
        break;
    }
    const std::uint64_t seed = rng();
    Parameters p = init_params(spec, seed);
    for (auto& l : p.layers) l.bias = random_matrix(l.bias.size(), 1, seed + 1, 0.1);
    const Index in = spec.input.size(), out = output_shape(spec).size();
    MatrixX<double> x = random_matrix(in, 2, seed + 2);
    MatrixX<double> w = random_matrix(out, 2, seed + 3);
    auto report = gradient_check(spec, p, LinearLoss{w}, x, 1e-6);
    CAPTURE(trial);
    CAPTURE(describe(spec));
    CHECK(report.max_relative_error <= (dense_only ? 1e-4 : 1e-3));
  }
}

TEST_CASE("property: softmax outputs are a distribution") {
  NetworkSpec spec{{7, 1, 1}, {Activation::Softmax}};
  Parameters p = init_params(spec, 0);
  for (std::uint64_t s = 0; s < 200; ++s) {
    MatrixX<double> y = forward(spec, p, random_matrix(7, 1, s, 50.0));
    CHECK((y.array() >= 0.0).all());
    CHECK(std::abs(y.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("forward is deterministic") {
  NetworkSpec spec = conv_classifier(16);
  Parameters p = init_params(spec, 3);
  MatrixX<double> x = random_matrix(256, 4, 4);
  CHECK(forward(spec, p, x) == forward(spec, p, x));
  CHECK(init_params(spec, 3) == p);
}

TEST_CASE("parameter files round-trip bit-exactly") {
  NetworkSpec spec = conv_classifier(16);
  Parameters p = init_params(spec, 8);
  p.layers[0].bias(2) = -0.0;
  p.layers[7].bias(1) = 1e-308;
  const auto path = std::filesystem::temp_directory_path() / "bridge_test_params.bin";
  save_params(spec, p, path);
  Parameters q = load_params(spec, path);
  CHECK(q == p);
  CHECK(std::signbit(q.layers[0].bias(2)));
  CHECK(encode_params(spec, q) == read_file(path));

  SUBCASE("loading against a different spec names the mismatch") {
    NetworkSpec other = conv_classifier(20);
    try {
      load_params(other, path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("fingerprint mismatch") != std::string::npos);
    }
  }
  SUBCASE("corrupted files raise structured errors") {
    std::string bytes = read_file(path);
    std::string flipped = bytes;
    flipped[bytes.size() - 3] ^= 0x10;
    CHECK_THROWS_AS(decode_params(spec, flipped), FormatError);
    CHECK_THROWS_AS(decode_params(spec, bytes.substr(0, bytes.size() - 8)), FormatError);
    CHECK_THROWS_AS(decode_params(spec, bytes.substr(0, 10)), FormatError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_params(spec, bad_magic), FormatError);
  }
  std::filesystem::remove(path);
}
