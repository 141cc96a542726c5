#include "mfnet/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace mfnet::linalg {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, int m,
            int k, int n) {
  for (int i = 0; i < m * n; ++i) c[i] = 0.0;
  add_matmul(a, b, c, m, k, n);
}

void add_matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
                int m, int k, int n, double scale) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] += scale * s;
    }
  }
}

void row_times(std::span<const double> v, std::span<const double> a, std::span<double> out,
               int m, int n) {
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += v[i] * a[i * n + j];
    out[j] = s;
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (auto& v : x) v *= alpha;
}

double operator_norm(std::span<const double> a, int rows, int cols) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      a.data(), rows, cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mfnet::linalg
