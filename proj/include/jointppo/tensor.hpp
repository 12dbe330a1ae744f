#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "jointppo/errors.hpp"

namespace jointppo {

// Dense row-major matrix of 64-bit floats. Everything the networks and
// losses touch is rank <= 2 at desk scale, so a (rows, cols) shape is the
// whole tensor story; batching is handled by stacking along rows.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw DimensionError("negative dimension (" + shape_str() + ")");
  }
  Tensor(int r, int c, std::initializer_list<double> vals) : Tensor(r, c) {
    if (static_cast<int>(vals.size()) != r * c)
      throw DimensionError("initializer size " + std::to_string(vals.size()) +
                           " does not match shape " + shape_str());
    std::copy(vals.begin(), vals.end(), data.begin());
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  double scalar() const {
    if (!is_scalar()) throw ContractError("scalar() on " + shape_str() + " tensor");
    return data[0];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }
};

// Boolean availability / validity mask with matrix shape.
struct BoolMat {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  BoolMat() = default;
  BoolMat(int r, int c, bool fill = true)
      : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  bool at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c] != 0; }
  bool empty() const { return v.empty(); }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shapes " + a.shape_str() + " and " +
                         b.shape_str() + " differ");
}

}  // namespace jointppo
