#include "mfnet/stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mfnet/error.hpp"
#include "mfnet/rng.hpp"

namespace mfnet::stats {

double mean(std::span<const double> v) {
  if (v.empty()) throw ContractViolation("mean of empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double quantile(std::span<const double> v, double q) {
  if (v.empty()) throw ContractViolation("quantile of empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::ranges::sort(s);
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

LineFit ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractViolation("ols: need >= 2 paired points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractViolation("ols: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

LineFit loglog(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ContractViolation("loglog: values must be positive");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return ols(lx, ly);
}

SlopeCI bootstrap_loglog(std::span<const double> x, const std::vector<std::vector<double>>& samples,
                         int resamples, std::uint64_t seed, double level) {
  if (samples.size() != x.size()) throw ContractViolation("bootstrap: one sample list per x");
  const std::size_t n = samples.front().size();
  for (const auto& s : samples)
    if (s.size() != n || n == 0) throw ContractViolation("bootstrap: unequal seed counts");
  std::vector<double> means;
  for (const auto& s : samples) means.push_back(mean(s));
  SlopeCI out;
  out.slope = loglog(x, means).slope;
  out.resamples = resamples;
  if (resamples <= 0) {
    out.lo = out.hi = out.slope;
    return out;
  }
  auto rng = make_engine(seed, "bootstrap");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> slopes;
  std::vector<std::size_t> idx(n);
  for (int r = 0; r < resamples; ++r) {
    for (auto& i : idx) i = pick(rng);
    std::vector<double> m;
    for (const auto& s : samples) {
      double acc = 0.0;
      for (std::size_t i : idx) acc += s[i];
      m.push_back(acc / static_cast<double>(n));
    }
    slopes.push_back(loglog(x, m).slope);
  }
  out.lo = quantile(slopes, (1.0 - level) / 2.0);
  out.hi = quantile(slopes, 1.0 - (1.0 - level) / 2.0);
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractViolation("pearson: need >= 2 pairs");
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractViolation("ks_statistic: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::ranges::sort(x);
  std::ranges::sort(y);
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / x.size() - static_cast<double>(j) / y.size()));
  }
  return d;
}

}  // namespace mfnet::stats
