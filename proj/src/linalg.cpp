#include "lcpred/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lcpred {

Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols != v.size())
    throw std::invalid_argument("matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  matvec_add(m, v, y);
  return y;
}

void matvec_add(const Mat& m, std::span<const double> v, std::span<double> y) {
  const double* a = m.a.data();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = a + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * v[c];
    y[r] += acc;
  }
}

void matvec_transposed_add(const Mat& m, std::span<const double> v,
                           std::span<double> y) {
  const double* a = m.a.data();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = a + r * m.cols;
    const double s = v[r];
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += s * row[c];
  }
}

void outer_add(Mat& m, std::span<const double> u, std::span<const double> v,
               double scale) {
  double* a = m.a.data();
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = a + r * m.cols;
    const double s = scale * u[r];
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += s * v[c];
  }
}

Vec sigmoid(const Vec& v) {
  Vec y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-v[i]));
  return y;
}

Vec tanh_vec(const Vec& v) {
  Vec y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = std::tanh(v[i]);
  return y;
}

Vec layer_norm(const Vec& v, const Vec& gain, const Vec& bias, double eps,
               double* mu_out, double* inv_sigma_out) {
  if (v.size() != gain.size() || v.size() != bias.size())
    throw std::invalid_argument("layer_norm: length mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t n = v.size();
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n);
  const double inv_sigma = 1.0 / std::sqrt(var + eps);
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = (v[i] - mu) * inv_sigma * gain[i] + bias[i];
  if (mu_out) *mu_out = mu;
  if (inv_sigma_out) *inv_sigma_out = inv_sigma;
  return y;
}

Vec softmax(const Vec& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  Vec y(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    y[i] = std::exp(v[i] - m);
    sum += y[i];
  }
  for (double& x : y) x /= sum;
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace lcpred
