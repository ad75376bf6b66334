#include "adds/matrix.hpp"

#include <cmath>
#include <string>

#include "adds/errors.hpp"

namespace adds {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw InvalidInput("matmul: shape mismatch (" + std::to_string(a.rows) + "x" +
                       std::to_string(a.cols) + ") * (" + std::to_string(b.rows) +
                       "x" + std::to_string(b.cols) + ")");
  }
  Matrix out(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      double* orow = &out.data[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace adds
