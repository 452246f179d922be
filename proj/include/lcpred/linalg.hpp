#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lcpred {

// All numerics in this library are double precision. Gradient checks at
// 1e-4 relative tolerance are not reachable in single precision.
using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {a.data() + r * cols, cols};
  }

  std::size_t size() const { return a.size(); }
};

// y = m * v. Dimension mismatch is a hard error.
Vec matvec(const Mat& m, const Vec& v);

// y += m * v, into a caller-owned buffer of length m.rows.
void matvec_add(const Mat& m, std::span<const double> v, std::span<double> y);

// y += m^T * v (v has length m.rows, y has length m.cols).
void matvec_transposed_add(const Mat& m, std::span<const double> v,
                           std::span<double> y);

// m += a * outer(u, v) with u length m.rows, v length m.cols.
void outer_add(Mat& m, std::span<const double> u, std::span<const double> v,
               double scale = 1.0);

// Elementwise logistic sigmoid; outputs in (0, 1).
Vec sigmoid(const Vec& v);

// Elementwise hyperbolic tangent; outputs in (-1, 1).
Vec tanh_vec(const Vec& v);

// (v - mean) / sqrt(var + eps) * gain + bias, with population variance
// over the vector's elements. Vectors must share a length and eps must be
// positive. When mu_out/inv_sigma_out are given the normalization
// statistics are reported for use by backward passes.
Vec layer_norm(const Vec& v, const Vec& gain, const Vec& bias, double eps,
               double* mu_out = nullptr, double* inv_sigma_out = nullptr);

// Numerically stable softmax (max subtraction); output sums to 1.
Vec softmax(const Vec& v);

double dot(std::span<const double> a, std::span<const double> b);

// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);

bool all_finite(std::span<const double> v);

}  // namespace lcpred
