#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace gcrank {

using Vec = std::vector<double>;

// Dense row-major matrix, just enough for the small networks here.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

inline double dot(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// y += a * x
inline void axpy(double a, const Vec& x, Vec& y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// out = W x
inline void matvec(const Mat& W, const Vec& x, Vec& out) {
  assert(W.cols == x.size());
  out.assign(W.rows, 0.0);
  for (std::size_t r = 0; r < W.rows; ++r) {
    double s = 0.0;
    const double* row = W.a.data() + r * W.cols;
    for (std::size_t c = 0; c < W.cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
}

// out += Wᵀ g
inline void matvec_t_accum(const Mat& W, const Vec& g, Vec& out) {
  assert(W.rows == g.size() && W.cols == out.size());
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double gr = g[r];
    const double* row = W.a.data() + r * W.cols;
    for (std::size_t c = 0; c < W.cols; ++c) out[c] += gr * row[c];
  }
}

// W += g xᵀ (outer product accumulate)
inline void outer_accum(Mat& W, const Vec& g, const Vec& x) {
  assert(W.rows == g.size() && W.cols == x.size());
  for (std::size_t r = 0; r < W.rows; ++r) {
    double* row = W.a.data() + r * W.cols;
    const double gr = g[r];
    for (std::size_t c = 0; c < W.cols; ++c) row[c] += gr * x[c];
  }
}

}  // namespace gcrank
