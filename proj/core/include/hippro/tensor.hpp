// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace hippro {

/// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
/// All training-time math runs in 64-bit; checkpoints narrow to float32.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), d(r * c, 0.0) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.d[0] = v;
    return t;
  }

  double& at(std::size_t i, std::size_t j) { return d[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return d[i * cols + j]; }

  std::size_t size() const { return d.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { d.assign(d.size(), v); }
};

} // namespace hippro
