#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mfnet::stats {

double mean(std::span<const double> v);
double stddev(std::span<const double> v);  // sample standard deviation
// Linear interpolation between order statistics, q in [0, 1].
double quantile(std::span<const double> v, double q);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LineFit ols(std::span<const double> x, std::span<const double> y);
// OLS of log y on log x; all values must be positive.
LineFit loglog(std::span<const double> x, std::span<const double> y);

struct SlopeCI {
  double slope = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int resamples = 0;
};

// Log-log slope of the per-x mean of `samples[x][seed]`, with a percentile
// bootstrap over seeds (the same resampled seeds are used at every x).
SlopeCI bootstrap_loglog(std::span<const double> x, const std::vector<std::vector<double>>& samples,
                         int resamples, std::uint64_t seed, double level = 0.95);

double pearson(std::span<const double> a, std::span<const double> b);

// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

}  // namespace mfnet::stats
