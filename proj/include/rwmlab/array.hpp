#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "rwmlab/errors.hpp"

namespace rwmlab {

// Dense row-major array of doubles. Rank is the shape length; most of the
// codebase works with rank-1 vectors and rank-2 [rows, cols] matrices.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Array() = default;
  Array(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Array zeros(std::vector<std::size_t> s) { return Array(std::move(s), 0.0); }
  static Array full(std::vector<std::size_t> s, double v) { return Array(std::move(s), v); }
  static Array scalar(double v) {
    Array a({1});
    a.data[0] = v;
    return a;
  }
  static Array from(std::vector<double> v) {
    Array a;
    a.shape = {v.size()};
    a.data = std::move(v);
    return a;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Rank-2 accessors.
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
}

}  // namespace rwmlab
