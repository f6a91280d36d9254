#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "tinytrain/error.hpp"

namespace tinytrain {

// Dense n-dimensional array of doubles, row-major. Carrier for activations,
// weights and gradients.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (numel_of(shape) != data.size()) {
      throw ValidationError("tensor: shape " + shape_string(shape) + " expects " +
                            std::to_string(numel_of(shape)) + " values, got " +
                            std::to_string(data.size()));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Flat index for a [d0,d1,d2,d3] tensor.
  std::size_t index4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return ((a * shape[1] + b) * shape[2] + c) * shape[3] + d;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ValidationError("tensor: dimension sizes must be positive");
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  std::string shape_str() const { return shape_string(shape); }
};

}  // namespace tinytrain
