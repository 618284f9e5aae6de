#pragma once

#include <Eigen/Dense>

#include <functional>
#include <numeric>
#include <vector>

#include "bridge/error.hpp"

namespace bridge::nn {

using Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major n-dimensional array. A tensor of shape {N, F...} has the same
/// memory layout as a column-major F x N matrix, which is how batches are fed
/// to the network (one sample per column).
template <typename Scalar>
struct BasicTensor {
  std::vector<Index> shape;
  VectorX<Scalar> values;

  BasicTensor() = default;

  BasicTensor(std::vector<Index> s, VectorX<Scalar> v) : shape(std::move(s)), values(std::move(v)) {
    if (element_count(shape) != values.size()) {
      throw ShapeError(0, "tensor shape product " + std::to_string(element_count(shape)) +
                              " does not match " + std::to_string(values.size()) + " values");
    }
  }

  static BasicTensor zeros(std::vector<Index> s) {
    const Index n = element_count(s);
    return BasicTensor(std::move(s), VectorX<Scalar>::Zero(n));
  }

  static Index element_count(const std::vector<Index>& s) {
    return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
  }

  Index size() const { return values.size(); }
  bool all_finite() const { return values.allFinite(); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape, values.template cast<Other>());
  }
};

using Tensor = BasicTensor<double>;

}  // namespace bridge::nn
