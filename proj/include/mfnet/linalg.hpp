#pragma once

#include <span>
#include <vector>

// Small dense helpers. Matrices are row-major spans; dimensions are tiny
// (at most a handful of rows/cols), so everything is a plain loop.
namespace mfnet::linalg {

using Vec = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double distance(std::span<const double> a, std::span<const double> b);

// c = a (m x k) * b (k x n)
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            int m, int k, int n);
// c += scale * a * b
void add_matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
                int m, int k, int n, double scale = 1.0);
// out (n) = v^T (m) * a (m x n)
void row_times(std::span<const double> v, std::span<const double> a, std::span<double> out,
               int m, int n);

void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

// Largest singular value.
double operator_norm(std::span<const double> a, int rows, int cols);

bool all_finite(std::span<const double> a);

}  // namespace mfnet::linalg
