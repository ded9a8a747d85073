#pragma once

#include <vector>

#include "mmg/tensor.hpp"

namespace mmg {

// Plain row-major 2-D array for non-differentiable data (motion channels,
// features, file payloads).
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  bool empty() const { return rows == 0 || cols == 0; }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

num::Tensor to_tensor(const Mat& m);
Mat to_mat(const num::Tensor& t);

}  // namespace mmg
