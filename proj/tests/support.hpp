#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mfnet/network.hpp"
#include "mfnet/sgd.hpp"

namespace testing {

using mfnet::DataDistribution;
using mfnet::NetworkConfig;
using mfnet::ParamVector;

inline mfnet::InitSpec init(std::uint64_t seed, double mean = 0.0, double scale = 1.0) {
  mfnet::InitSpec s;
  s.seed = seed;
  s.layers = {mfnet::InitLayer{"gaussian", mean, scale}};
  return s;
}

inline ParamVector random_params(const NetworkConfig& cfg, std::uint64_t seed, double mean = 0.0,
                                 double scale = 1.0) {
  return mfnet::init_params(cfg, init(seed, mean, scale));
}

inline DataDistribution random_data(int B, std::uint64_t seed, int dx = 1, int dy = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> xs(static_cast<std::size_t>(B) * dx), ys(static_cast<std::size_t>(B) * dy);
  for (double& v : xs) v = u(rng);
  for (double& v : ys) v = 0.8 * u(rng);
  return DataDistribution::uniform(dx, dy, xs, ys);
}

// tanh(W z + b) with W row-major (out x in) followed by b.
inline std::vector<double> tanh_affine(const std::vector<double>& z, std::span<const double> th,
                                       int out) {
  const int in = static_cast<int>(z.size());
  std::vector<double> r(out);
  for (int a = 0; a < out; ++a) {
    double u = th[out * in + a];
    for (int c = 0; c < in; ++c) u += th[a * in + c] * z[c];
    r[a] = std::tanh(u);
  }
  return r;
}

// d tanh(W z + b) / dz, out x in.
inline std::vector<double> tanh_affine_jac(const std::vector<double>& z, std::span<const double> th,
                                           int out) {
  const int in = static_cast<int>(z.size());
  std::vector<double> J(static_cast<std::size_t>(out) * in);
  for (int a = 0; a < out; ++a) {
    double u = th[out * in + a];
    for (int c = 0; c < in; ++c) u += th[a * in + c] * z[c];
    const double f = 1.0 - std::tanh(u) * std::tanh(u);
    for (int c = 0; c < in; ++c) J[a * in + c] = f * th[a * in + c];
  }
  return J;
}

// Literal recomputation of every neuron: z[l][i] is a d_l vector.
inline std::vector<std::vector<std::vector<double>>> naive_forward(std::span<const double> x,
                                                                  const ParamVector& p,
                                                                  const NetworkConfig& cfg) {
  std::vector<std::vector<std::vector<double>>> z(cfg.L + 2);
  z[0] = {std::vector<double>(x.begin(), x.end())};
  for (int l = 0; l <= cfg.L; ++l) {
    const int nin = cfg.width(l), nout = cfg.width(l + 1), dout = cfg.d[l + 1];
    z[l + 1].assign(nout, std::vector<double>(dout, 0.0));
    for (int j = 0; j < nout; ++j) {
      for (int i = 0; i < nin; ++i) {
        const auto s = tanh_affine(z[l][i], p.edge(l, i, j), dout);
        for (int a = 0; a < dout; ++a) z[l + 1][j][a] += s[a];
      }
      if (nin > 1)
        for (int a = 0; a < dout; ++a) z[l + 1][j][a] /= nin;
    }
  }
  return z;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (int l = 0; l < a.layer_count(); ++l) m = std::max(m, max_abs_diff(a.layer(l), b.layer(l)));
  return m;
}

inline double max_abs(const ParamVector& a) {
  double m = 0.0;
  for (int l = 0; l < a.layer_count(); ++l)
    for (double v : a.layer(l)) m = std::max(m, std::abs(v));
  return m;
}

// Relative error |a - b| / max(|b|, floor) in the Euclidean norm.
inline double rel_error(std::span<const double> a, std::span<const double> b,
                        double floor = 1e-12) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

// Central difference of f along every coordinate of p; f returns a vector.
inline std::vector<std::vector<double>> fd_columns(
    ParamVector p, int layer, int i, int j,
    const std::function<std::vector<double>(const ParamVector&)>& f, double h = 1e-5) {
  std::vector<std::vector<double>> cols;
  auto e = p.edge(layer, i, j);
  for (std::size_t q = 0; q < e.size(); ++q) {
    const double keep = e[q];
    e[q] = keep + h;
    const auto up = f(p);
    e[q] = keep - h;
    const auto dn = f(p);
    e[q] = keep;
    std::vector<double> c(up.size());
    for (std::size_t r = 0; r < up.size(); ++r) c[r] = (up[r] - dn[r]) / (2 * h);
    cols.push_back(c);
  }
  return cols;
}

}  // namespace testing

namespace testing {

// A^(l)_i by explicit enumeration of every chain i = i_l, i_{l+1}, ..., i_L,
// i_{L+1} = 0: the sum over chains of the Jacobian product, factor m
// divided by N_{m+1}. Identity output layer. d_Y x d_l.
inline std::vector<double> brute_adjoint(std::span<const double> x, const ParamVector& p,
                                         const NetworkConfig& cfg, int l, int i) {
  const auto z = naive_forward(x, p, cfg);
  const int dy = cfg.d_y();
  std::vector<double> total(static_cast<std::size_t>(dy) * cfg.d[l], 0.0);
  std::vector<int> chain(cfg.L + 2, 0);
  chain[l] = i;
  std::function<void(int)> rec = [&](int k) {
    if (k == cfg.L + 1) {
      // product right-to-left: start with identity on layer l
      std::vector<double> acc(static_cast<std::size_t>(cfg.d[l]) * cfg.d[l], 0.0);
      for (int a = 0; a < cfg.d[l]; ++a) acc[a * cfg.d[l] + a] = 1.0;
      int rows = cfg.d[l];
      for (int m = l; m <= cfg.L; ++m) {
        const auto J = tanh_affine_jac(z[m][chain[m]], p.edge(m, chain[m], chain[m + 1]),
                                       cfg.d[m + 1]);
        std::vector<double> nxt(static_cast<std::size_t>(cfg.d[m + 1]) * cfg.d[l], 0.0);
        for (int a = 0; a < cfg.d[m + 1]; ++a)
          for (int b = 0; b < rows; ++b)
            for (int c = 0; c < cfg.d[l]; ++c)
              nxt[a * cfg.d[l] + c] += J[a * rows + b] * acc[b * cfg.d[l] + c] / cfg.width(m + 1);
        acc = nxt;
        rows = cfg.d[m + 1];
      }
      for (std::size_t q = 0; q < total.size(); ++q) total[q] += acc[q];
      return;
    }
    for (int j = 0; j < cfg.width(k); ++j) {
      chain[k] = j;
      rec(k + 1);
    }
  };
  rec(l + 1);
  return total;
}

}  // namespace testing

#include "mfnet/meanfield.hpp"

namespace testing {

inline void tile(std::vector<double>& v, std::span<const double> row) {
  for (std::size_t q = 0; q < v.size(); ++q) v[q] = row[q % row.size()];
}

// Every particle of every block equal to the N = 1 weights p1 at all times.
inline mfnet::PathEnsemble dirac_ensemble(const NetworkConfig& cfg, const ParamVector& p1,
                                          const mfnet::EnsembleCounts& counts,
                                          const mfnet::TimeGrid& grid) {
  mfnet::PathEnsemble e(cfg, counts, grid);
  const int L = cfg.L;
  tile(e.raw_a0(), p1.edge(0, 0, 0));
  tile(e.raw_layer1(), p1.edge(1, 0, 0));
  for (int l = 2; l <= L - 2; ++l) tile(e.raw_middle()[l - 2], p1.edge(l, 0, 0));
  tile(e.raw_aL(), p1.edge(L, 0, 0));
  tile(e.raw_fiber_init(), p1.edge(L - 1, 0, 0));
  tile(e.raw_fibers(), p1.edge(L - 1, 0, 0));
  return e;
}

// N = 1 weights read off one particle of each block at node k (fiber (i, j)).
inline ParamVector particle_params(const mfnet::PathEnsemble& e, const NetworkConfig& cfg1, int k,
                                   int p, int i, int j) {
  ParamVector out(cfg1);
  auto put = [&](int l, std::span<const double> v) {
    std::copy(v.begin(), v.end(), out.edge(l, 0, 0).begin());
  };
  put(0, e.a0(p));
  put(1, e.layer1(k, p));
  for (int l = 2; l <= cfg1.L - 2; ++l) put(l, e.mid(l, k, p));
  put(cfg1.L - 1, e.fiber(k, i, j));
  put(cfg1.L, e.aL(j));
  return out;
}

}  // namespace testing
