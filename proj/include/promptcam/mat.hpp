#pragma once

#include <cstddef>
#include <vector>

namespace pcam {

// Plain row-major f64 matrix for the tape-free evaluation path. Deliberately
// minimal: the autodiff Tensor does not depend on it and vice versa, so the
// two forward implementations stay independent of each other.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), a(std::move(values)) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  std::size_t size() const { return a.size(); }
};

}  // namespace pcam
