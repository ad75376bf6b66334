#pragma once

#include <cstddef>
#include <vector>

namespace adds {

// Row-major dense matrix of 64-bit reals.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool empty() const { return data.empty(); }

  bool operator==(const Matrix&) const = default;
};

// a (n x k) times b (k x m); throws InvalidInput on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

}  // namespace adds
