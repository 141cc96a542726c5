#include "mfnet/meanfield.hpp"

#include <algorithm>
#include <cmath>

#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/parallel.hpp"
#include "mfnet/rng.hpp"

namespace mfnet {

EnsembleCounts validated(const EnsembleCounts& c) {
  if (c.M < 1) throw ConfigError("ensemble.M", "must be >= 1");
  if (c.M_L < 1) throw ConfigError("ensemble.M_L", "must be >= 1");
  if (c.M_Lm1 < 1) throw ConfigError("ensemble.M_Lm1", "must be >= 1");
  return c;
}

PathEnsemble::PathEnsemble(const NetworkConfig& cfg, const EnsembleCounts& counts,
                           const TimeGrid& grid)
    : L_(cfg.L), counts_(validated(counts)), grid_(grid) {
  if (grid.K < 1) throw ConfigError("ensemble.K", "must be >= 1");
  if (!(grid.T > 0.0)) throw ConfigError("run.T", "must be > 0");
  for (int l = 0; l <= L_; ++l) D_.push_back(cfg.param_dim(l));
  const std::size_t nodes = static_cast<std::size_t>(grid.K) + 1;
  const std::size_t M = counts_.M;
  a0_.assign(M * D_[0], 0.0);
  layer1_.assign(nodes * M * D_[1], 0.0);
  for (int l = 2; l <= L_ - 2; ++l) middle_.emplace_back(nodes * M * D_[l], 0.0);
  aL_.assign(static_cast<std::size_t>(counts_.M_L) * D_[L_], 0.0);
  fiber_init_.assign(static_cast<std::size_t>(counts_.M_Lm1) * D_[L_ - 1], 0.0);
  fibers_.assign(nodes * counts_.M_L * counts_.M_Lm1 * D_[L_ - 1], 0.0);
}

void PathEnsemble::make_constant() {
  auto spread = [&](std::vector<double>& v) {
    const std::size_t slice = v.size() / (static_cast<std::size_t>(grid_.K) + 1);
    for (int k = 1; k <= grid_.K; ++k)
      std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(slice),
                v.begin() + static_cast<std::ptrdiff_t>(slice * k));
  };
  spread(layer1_);
  for (auto& m : middle_) spread(m);
  spread(fibers_);
}

MeasureSnapshot PathEnsemble::snapshot(int k) const {
  if (k < 0 || k > grid_.K) throw ContractViolation("snapshot: node out of range");
  MeasureSnapshot s;
  s.L = L_;
  s.D = D_;
  s.counts = counts_;
  s.a0 = a0_;
  s.aL = aL_;
  auto slice = [&](const std::vector<double>& v) {
    const std::size_t n = v.size() / (static_cast<std::size_t>(grid_.K) + 1);
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(n * k);
    return std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n));
  };
  s.a1 = slice(layer1_);
  for (const auto& m : middle_) s.middle.push_back(slice(m));
  s.fibers = slice(fibers_);
  return s;
}

MeasureSnapshot PathEnsemble::snapshot_at(double t) const {
  if (t < -1e-12 || t > grid_.T * (1 + 1e-12)) throw ContractViolation("snapshot_at: t outside [0, T]");
  const double u = std::clamp(t / grid_.dt(), 0.0, static_cast<double>(grid_.K));
  const int k = std::min(static_cast<int>(std::floor(u)), grid_.K);
  const double frac = u - k;
  MeasureSnapshot s = snapshot(k);
  if (frac < 1e-12 || k == grid_.K) return s;
  const MeasureSnapshot e = snapshot(k + 1);
  auto mix = [&](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t n = 0; n < a.size(); ++n) a[n] += frac * (b[n] - a[n]);
  };
  mix(s.a1, e.a1);
  for (std::size_t m = 0; m < s.middle.size(); ++m) mix(s.middle[m], e.middle[m]);
  mix(s.fibers, e.fibers);
  return s;
}

bool PathEnsemble::same_structure(const PathEnsemble& o) const {
  return L_ == o.L_ && D_ == o.D_ && counts_.M == o.counts_.M && counts_.M_L == o.counts_.M_L &&
         counts_.M_Lm1 == o.counts_.M_Lm1 && grid_.K == o.grid_.K && grid_.T == o.grid_.T;
}

bool PathEnsemble::same_initial(const PathEnsemble& o) const {
  if (!same_structure(o)) return false;
  if (a0_ != o.a0_ || aL_ != o.aL_ || fiber_init_ != o.fiber_init_) return false;
  auto first = [&](const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size() / (static_cast<std::size_t>(grid_.K) + 1);
    return std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n), b.begin());
  };
  if (!first(layer1_, o.layer1_) || !first(fibers_, o.fibers_)) return false;
  for (std::size_t m = 0; m < middle_.size(); ++m)
    if (!first(middle_[m], o.middle_[m])) return false;
  return true;
}

bool PathEnsemble::all_finite() const {
  if (!linalg::all_finite(a0_) || !linalg::all_finite(layer1_) || !linalg::all_finite(aL_) ||
      !linalg::all_finite(fiber_init_) || !linalg::all_finite(fibers_))
    return false;
  for (const auto& m : middle_)
    if (!linalg::all_finite(m)) return false;
  return true;
}

PathEnsemble sample_ensemble(const NetworkConfig& cfg, const InitSpec& init,
                             const TimeGrid& grid, const EnsembleCounts& counts) {
  init.validate(cfg);
  PathEnsemble e(cfg, counts, grid);
  e.set_seed(init.seed);
  const int L = cfg.L;
  auto draw = [&](int l, std::uint64_t idx, std::span<double> out) {
    auto rng = make_engine(init.seed, "ensemble", static_cast<std::uint64_t>(l), idx);
    init.draw(l, rng, out);
  };
  for (int p = 0; p < counts.M; ++p) {
    draw(0, p, e.a0(p));
    draw(1, p, e.layer1(0, p));
    for (int l = 2; l <= L - 2; ++l) draw(l, p, e.mid(l, 0, p));
  }
  for (int j = 0; j < counts.M_L; ++j) draw(L, j, e.aL(j));
  for (int i = 0; i < counts.M_Lm1; ++i) draw(L - 1, i, e.fiber_init(i));
  for (int j = 0; j < counts.M_L; ++j)
    for (int i = 0; i < counts.M_Lm1; ++i) {
      const auto a = e.fiber_init(i);
      std::copy(a.begin(), a.end(), e.fiber(0, i, j).begin());
    }
  e.make_constant();
  return e;
}

namespace {

void check_snapshot(const MeasureSnapshot& snap, const NetworkConfig& cfg) {
  if (snap.L != cfg.L) throw DimensionError("snapshot layer count does not match network");
  for (int l = 0; l <= cfg.L; ++l)
    if (snap.D[l] != cfg.param_dim(l)) throw DimensionError("snapshot parameter dims");
}

void divide(std::span<double> v, int n) {
  if (n > 1)
    for (auto& x : v) x /= n;
}

}  // namespace

MeanFieldTrace zbar_forward(std::span<const double> x, const MeasureSnapshot& snap,
                            const NetworkConfig& cfg) {
  check_snapshot(snap, cfg);
  if (static_cast<int>(x.size()) != cfg.d_x()) throw DimensionError("zbar_forward: input dimension");
  const int L = cfg.L;
  const auto& d = cfg.d;
  const auto& c = snap.counts;
  MeanFieldTrace t;
  t.d_y = cfg.d_y();
  t.x.assign(x.begin(), x.end());
  t.zbar.resize(L + 1);
  std::vector<double> tmp(cfg.max_dim());

  t.u.assign(static_cast<std::size_t>(c.M) * d[1], 0.0);
  t.zbar[2].assign(d[2], 0.0);
  for (int p = 0; p < c.M; ++p) {
    std::span<double> up(t.u.data() + static_cast<std::size_t>(p) * d[1], d[1]);
    cfg.act[0].eval(x, snap.pair0(p), up);
    std::span<double> s(tmp.data(), d[2]);
    cfg.act[1].eval(up, snap.pair1(p), s);
    for (int r = 0; r < d[2]; ++r) t.zbar[2][r] += s[r];
  }
  divide(t.zbar[2], c.M);

  for (int l = 2; l <= L - 2; ++l) {
    auto& next = t.zbar[l + 1];
    next.assign(d[l + 1], 0.0);
    std::span<double> s(tmp.data(), d[l + 1]);
    for (int p = 0; p < c.M; ++p) {
      cfg.act[l].eval(t.zbar[l], snap.mid(l, p), s);
      for (int r = 0; r < d[l + 1]; ++r) next[r] += s[r];
    }
    divide(next, c.M);
  }

  const int dL = d[L];
  t.zL.assign(static_cast<std::size_t>(c.M_L) * dL, 0.0);
  std::span<double> s(tmp.data(), dL);
  for (int j = 0; j < c.M_L; ++j) {
    std::span<double> col(t.zL.data() + static_cast<std::size_t>(j) * dL, dL);
    for (int i = 0; i < c.M_Lm1; ++i) {
      cfg.act[L - 1].eval(t.zbar[L - 1], snap.fiber(i, j), s);
      for (int r = 0; r < dL; ++r) col[r] += s[r];
    }
    divide(col, c.M_Lm1);
  }

  t.zL1.assign(d[L + 1], 0.0);
  std::span<double> s2(tmp.data(), d[L + 1]);
  for (int j = 0; j < c.M_L; ++j) {
    cfg.act[L].eval(t.zL_col(j, dL), snap.last(j), s2);
    for (int r = 0; r < d[L + 1]; ++r) t.zL1[r] += s2[r];
  }
  divide(t.zL1, c.M_L);

  t.ybar.assign(cfg.d_y(), 0.0);
  cfg.act[L + 1].eval(t.zL1, {}, t.ybar);
  return t;
}

void mbar(MeanFieldTrace& t, const MeasureSnapshot& snap, const NetworkConfig& cfg,
          MbarCoupling coupling) {
  check_snapshot(snap, cfg);
  const int L = cfg.L;
  const int dy = cfg.d_y();
  const auto& d = cfg.d;
  const auto& c = snap.counts;
  const int dL = d[L];

  t.MbarL1.assign(static_cast<std::size_t>(dy) * d[L + 1], 0.0);
  cfg.act[L + 1].jacobian_z(t.zL1, {}, t.MbarL1);

  t.MbarL.assign(static_cast<std::size_t>(c.M_L) * dy * dL, 0.0);
  for (int j = 0; j < c.M_L; ++j) {
    std::span<double> blk(t.MbarL.data() + static_cast<std::size_t>(j) * dy * dL,
                          static_cast<std::size_t>(dy) * dL);
    for (int r = 0; r < dy; ++r)
      cfg.act[L].add_vjp_z(t.zL_col(j, dL), snap.last(j),
                           std::span<const double>(t.MbarL1).subspan(r * d[L + 1], d[L + 1]), 1.0,
                           blk.subspan(static_cast<std::size_t>(r) * dL, dL));
  }

  t.Mbar.assign(L + 1, {});
  const int dm = d[L - 1];
  auto& top = t.Mbar[L - 1];
  top.assign(static_cast<std::size_t>(dy) * dm, 0.0);
  const double inv = 1.0 / (static_cast<double>(c.M_L) * c.M_Lm1);
  if (coupling == MbarCoupling::Joint) {
    for (int j = 0; j < c.M_L; ++j) {
      const auto m = t.MbarL_col(j, dL);
      for (int i = 0; i < c.M_Lm1; ++i)
        for (int r = 0; r < dy; ++r)
          cfg.act[L - 1].add_vjp_z(t.zbar[L - 1], snap.fiber(i, j),
                                   m.subspan(static_cast<std::size_t>(r) * dL, dL), inv,
                                   std::span<double>(top).subspan(r * dm, dm));
    }
  } else {
    std::vector<double> mean_m(static_cast<std::size_t>(dy) * dL, 0.0);
    for (int j = 0; j < c.M_L; ++j) linalg::axpy(1.0 / c.M_L, t.MbarL_col(j, dL), mean_m);
    std::vector<double> jac(static_cast<std::size_t>(dL) * dm, 0.0);
    for (int j = 0; j < c.M_L; ++j)
      for (int i = 0; i < c.M_Lm1; ++i)
        cfg.act[L - 1].add_jacobian_z(t.zbar[L - 1], snap.fiber(i, j), inv, jac);
    linalg::matmul(mean_m, jac, top, dy, dL, dm);
  }

  for (int l = L - 2; l >= 2; --l) {
    auto& cur = t.Mbar[l];
    cur.assign(static_cast<std::size_t>(dy) * d[l], 0.0);
    const auto& next = t.Mbar[l + 1];
    for (int p = 0; p < c.M; ++p)
      for (int r = 0; r < dy; ++r)
        cfg.act[l].add_vjp_z(t.zbar[l], snap.mid(l, p),
                             std::span<const double>(next).subspan(r * d[l + 1], d[l + 1]),
                             1.0 / c.M, std::span<double>(cur).subspan(r * d[l], d[l]));
  }
  t.has_mbar = true;
}

MeanFieldTrace mean_field_trace(std::span<const double> x, const MeasureSnapshot& snap,
                                const NetworkConfig& cfg, MbarCoupling coupling) {
  MeanFieldTrace t = zbar_forward(x, snap, cfg);
  mbar(t, snap, cfg, coupling);
  return t;
}

std::vector<std::vector<double>> gammabar(const PathWeights& path, int column,
                                          const MeanFieldTrace& t, const MeasureSnapshot& snap,
                                          const NetworkConfig& cfg) {
  if (!t.has_mbar) throw ContractViolation("gammabar: trace has no M-part");
  const int L = cfg.L;
  if (static_cast<int>(path.size()) != L + 1) throw DimensionError("gammabar: path length");
  for (int l = 0; l <= L; ++l)
    if (static_cast<int>(path[l].size()) != cfg.param_dim(l))
      throw DimensionError("gammabar: path component " + std::to_string(l));
  if (column < 0 || column >= snap.counts.M_L)
    throw ContractViolation("gammabar: layer L-1 needs a known a^(L) column");
  const int dy = cfg.d_y();
  const auto& d = cfg.d;
  std::vector<std::vector<double>> out(L + 1);

  auto fill = [&](int l, std::span<const double> z, std::span<const double> m, int dm) {
    const int D = cfg.param_dim(l);
    out[l].assign(static_cast<std::size_t>(dy) * D, 0.0);
    for (int r = 0; r < dy; ++r)
      cfg.act[l].add_vjp_theta(z, path[l], m.subspan(static_cast<std::size_t>(r) * dm, dm), 1.0,
                               std::span<double>(out[l]).subspan(static_cast<std::size_t>(r) * D, D));
  };

  std::vector<double> u(d[1]);
  cfg.act[0].eval(t.x, path[0], u);
  fill(1, u, t.Mbar[2], d[2]);
  for (int l = 2; l <= L - 2; ++l) fill(l, t.zbar[l], t.Mbar[l + 1], d[l + 1]);
  fill(L - 1, t.zbar[L - 1], t.MbarL_col(column, d[L]), d[L]);
  return out;
}

std::vector<std::vector<double>> gradbar(std::span<const double> x, std::span<const double> y,
                                         const MeasureSnapshot& snap, const PathWeights& path,
                                         int column, const NetworkConfig& cfg,
                                         MbarCoupling coupling) {
  const int dy = cfg.d_y();
  if (static_cast<int>(y.size()) != dy) throw DimensionError("gradbar: target dimension");
  if (linalg::norm(y) > cfg.C) throw ContractViolation("gradbar: |y| exceeds C");
  const MeanFieldTrace t = mean_field_trace(x, snap, cfg, coupling);
  const auto gam = gammabar(path, column, t, snap, cfg);
  std::vector<double> residual(dy);
  for (int r = 0; r < dy; ++r) residual[r] = t.ybar[r] - y[r];
  std::vector<std::vector<double>> out(cfg.L + 1);
  for (int l = 0; l <= cfg.L; ++l) {
    out[l].assign(cfg.param_dim(l), 0.0);
    if (l >= 1 && l <= cfg.L - 1) linalg::row_times(residual, gam[l], out[l], dy, cfg.param_dim(l));
  }
  return out;
}

std::vector<double> ybar_values(const MeasureSnapshot& snap, const DataDistribution& data,
                                const NetworkConfig& cfg) {
  const int dy = cfg.d_y();
  std::vector<double> out(static_cast<std::size_t>(data.size()) * dy);
  parallel_for(data.size(), [&](std::size_t b) {
    const MeanFieldTrace t = zbar_forward(data.x(static_cast<int>(b)), snap, cfg);
    std::copy(t.ybar.begin(), t.ybar.end(), out.begin() + static_cast<std::ptrdiff_t>(b * dy));
  });
  return out;
}

double loss_bar(const MeasureSnapshot& snap, const DataDistribution& data,
                const NetworkConfig& cfg) {
  const int dy = cfg.d_y();
  const auto yb = ybar_values(snap, data, cfg);
  double total = 0.0;
  for (int b = 0; b < data.size(); ++b) {
    const double dist = linalg::distance(
        data.y(b), std::span<const double>(yb).subspan(static_cast<std::size_t>(b) * dy, dy));
    total += data.weight(b) * dist * dist;
  }
  return 0.5 * total;
}

}  // namespace mfnet
