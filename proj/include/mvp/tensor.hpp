#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mvp/common.hpp"

namespace mvp {

// Dense row-major tensor of 64-bit floats. Values are immutable by
// convention once they enter a Tape; the struct itself is a plain value.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(checked_size(shape), 0.0);
  }

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (checked_size(shape) != data.size())
      throw DimensionError(str("tensor shape ", shape_str(shape), " does not match ",
                               data.size(), " elements"));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& s) {
    if (s.empty()) throw DimensionError("tensor rank must be >= 1");
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw DimensionError(str("dimension sizes must be >= 1, got ", shape_str(s)));
      n *= d;
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// Raw kernels. All accumulate into C; callers zero the output first. Loop
// orders are chosen so the innermost loop streams contiguous memory.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void matmul_acc_nn(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A^T[k,m] * B[m,n]   (A stored as [m,k])
inline void matmul_acc_tn(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,l] += A[m,k] * B^T[k,l]   (B stored as [l,k])
inline void matmul_acc_nt(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t l) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * l;
    for (std::size_t p = 0; p < l; ++p) {
      const double* brow = b + p * k;
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

}  // namespace mvp
