#include "mfnet/mckean_vlasov.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/parallel.hpp"

namespace mfnet {

namespace {

std::span<const double> row(const std::vector<double>& v, std::size_t r, int dim) {
  return {v.data() + r * dim, static_cast<std::size_t>(dim)};
}
std::span<double> row(std::vector<double>& v, std::size_t r, int dim) {
  return {v.data() + r * dim, static_cast<std::size_t>(dim)};
}

void euler(std::span<const double> cur, std::span<const double> drift, double dt,
           std::span<double> next) {
  for (std::size_t c = 0; c < cur.size(); ++c) next[c] = cur[c] + dt * drift[c];
}

}  // namespace

DriftField drift_field(const MeasureSnapshot& snap, const DataDistribution& data, double alpha,
                       const NetworkConfig& cfg, MbarCoupling coupling) {
  data.check_against(cfg);
  const int L = cfg.L;
  const int B = data.size();
  const int dy = cfg.d_y();
  const auto& d = cfg.d;
  const int ML = snap.counts.M_L;
  DriftField f;
  f.L = L;
  f.B = B;
  f.M_L = ML;
  f.alpha = alpha;
  f.xs.resize(static_cast<std::size_t>(B) * cfg.d_x());
  for (int b = 0; b < B; ++b) std::ranges::copy(data.x(b), row(f.xs, b, cfg.d_x()).begin());
  f.zbar.resize(L);
  for (int l = 2; l <= L - 1; ++l) f.zbar[l].assign(static_cast<std::size_t>(B) * d[l], 0.0);
  f.g.resize(L - 1);
  for (int l = 1; l <= L - 2; ++l) f.g[l].assign(static_cast<std::size_t>(B) * d[l + 1], 0.0);
  f.gL.assign(static_cast<std::size_t>(B) * ML * d[L], 0.0);
  f.hL1.assign(static_cast<std::size_t>(B) * d[L + 1], 0.0);

  parallel_for(B, [&](std::size_t b) {
    const MeanFieldTrace t = mean_field_trace(data.x(static_cast<int>(b)), snap, cfg, coupling);
    std::vector<double> wr(dy);
    const auto y = data.y(static_cast<int>(b));
    for (int r = 0; r < dy; ++r) wr[r] = data.weight(static_cast<int>(b)) * (t.ybar[r] - y[r]);
    for (int l = 2; l <= L - 1; ++l) std::ranges::copy(t.zbar[l], row(f.zbar[l], b, d[l]).begin());
    for (int l = 1; l <= L - 2; ++l)
      linalg::row_times(wr, t.Mbar[l + 1], row(f.g[l], b, d[l + 1]), dy, d[l + 1]);
    for (int j = 0; j < ML; ++j)
      linalg::row_times(wr, t.MbarL_col(j, d[L]), row(f.gL, b * ML + j, d[L]), dy, d[L]);
    linalg::row_times(wr, t.MbarL1, row(f.hL1, b, d[L + 1]), dy, d[L + 1]);
  });
  return f;
}

void add_drift_layer1(const DriftField& f, const NetworkConfig& cfg, std::span<const double> a0,
                      std::span<const double> a1, std::span<double> out) {
  std::vector<double> u(cfg.d[1]);
  for (int b = 0; b < f.B; ++b) {
    cfg.act[0].eval(row(f.xs, b, cfg.d_x()), a0, u);
    cfg.act[1].add_vjp_theta(u, a1, row(f.g[1], b, cfg.d[2]), -f.alpha, out);
  }
}

void add_drift_middle(const DriftField& f, const NetworkConfig& cfg, int l,
                      std::span<const double> theta, std::span<double> out) {
  for (int b = 0; b < f.B; ++b)
    cfg.act[l].add_vjp_theta(row(f.zbar[l], b, cfg.d[l]), theta, row(f.g[l], b, cfg.d[l + 1]),
                             -f.alpha, out);
}

void add_drift_fiber(const DriftField& f, const NetworkConfig& cfg, int j,
                     std::span<const double> theta, std::span<double> out) {
  const int L = cfg.L;
  for (int b = 0; b < f.B; ++b)
    cfg.act[L - 1].add_vjp_theta(row(f.zbar[L - 1], b, cfg.d[L - 1]), theta,
                                 row(f.gL, static_cast<std::size_t>(b) * f.M_L + j, cfg.d[L]),
                                 -f.alpha, out);
}

std::vector<double> column_z(const DriftField& f, const NetworkConfig& cfg,
                             std::span<const double> fibers, int rows) {
  const int L = cfg.L;
  const int dL = cfg.d[L];
  const int Dm = cfg.param_dim(L - 1);
  std::vector<double> out(static_cast<std::size_t>(f.B) * dL, 0.0);
  std::vector<double> s(dL);
  for (int b = 0; b < f.B; ++b) {
    auto col = row(out, b, dL);
    for (int i = 0; i < rows; ++i) {
      cfg.act[L - 1].eval(row(f.zbar[L - 1], b, cfg.d[L - 1]),
                          fibers.subspan(static_cast<std::size_t>(i) * Dm, Dm), s);
      for (int r = 0; r < dL; ++r) col[r] += s[r];
    }
    if (rows > 1)
      for (auto& v : col) v /= rows;
  }
  return out;
}

std::vector<double> column_cotangent(const DriftField& f, const NetworkConfig& cfg,
                                     std::span<const double> zL, std::span<const double> aL) {
  const int L = cfg.L;
  const int dL = cfg.d[L];
  std::vector<double> out(static_cast<std::size_t>(f.B) * dL, 0.0);
  for (int b = 0; b < f.B; ++b)
    cfg.act[L].add_vjp_z(zL.subspan(static_cast<std::size_t>(b) * dL, dL), aL,
                         row(f.hL1, b, cfg.d[L + 1]), 1.0, row(out, b, dL));
  return out;
}

void add_drift_column(const DriftField& f, const NetworkConfig& cfg,
                      std::span<const double> cotangent, std::span<const double> theta,
                      std::span<double> out) {
  const int L = cfg.L;
  const int dL = cfg.d[L];
  for (int b = 0; b < f.B; ++b)
    cfg.act[L - 1].add_vjp_theta(row(f.zbar[L - 1], b, cfg.d[L - 1]), theta,
                                 cotangent.subspan(static_cast<std::size_t>(b) * dL, dL), -f.alpha,
                                 out);
}

std::vector<DriftField> drift_fields(const PathEnsemble& ens, const DataDistribution& data,
                                     const LRSchedule& sched, const NetworkConfig& cfg,
                                     MbarCoupling coupling) {
  std::vector<DriftField> out;
  out.reserve(ens.grid().K + 1);
  for (int k = 0; k <= ens.grid().K; ++k)
    out.push_back(drift_field(ens.snapshot(k), data, sched(ens.grid().time(k)), cfg, coupling));
  return out;
}

ColumnFlow flow_column(const PathEnsemble& ens, const std::vector<DriftField>& fields,
                       std::span<const double> aL, std::span<const double> passenger_init,
                       const NetworkConfig& cfg) {
  const int K = ens.grid().K;
  const double dt = ens.grid().dt();
  const int L = cfg.L;
  const int Dm = cfg.param_dim(L - 1);
  if (static_cast<int>(fields.size()) != K + 1) throw ContractViolation("flow_column: need K + 1 fields");
  if (static_cast<int>(aL.size()) != cfg.param_dim(L)) throw DimensionError("flow_column: a^(L) dim");
  if (passenger_init.size() % Dm != 0) throw DimensionError("flow_column: passenger dim");
  ColumnFlow c;
  c.rows = ens.counts().M_Lm1;
  c.passengers = static_cast<int>(passenger_init.size() / Dm);
  const std::size_t fsz = static_cast<std::size_t>(c.rows) * Dm;
  const std::size_t psz = static_cast<std::size_t>(c.passengers) * Dm;
  const std::size_t zsz = static_cast<std::size_t>(fields[0].B) * cfg.d[L];
  c.fibers.assign((K + 1) * fsz, 0.0);
  c.riders.assign((K + 1) * psz, 0.0);
  c.zL.assign((K + 1) * zsz, 0.0);
  std::ranges::copy(ens.raw_fiber_init(), c.fibers.begin());
  std::ranges::copy(passenger_init, c.riders.begin());

  std::vector<double> drift(Dm);
  for (int k = 0; k <= K; ++k) {
    std::span<const double> cur_f(c.fibers.data() + k * fsz, fsz);
    const auto z = column_z(fields[k], cfg, cur_f, c.rows);
    std::ranges::copy(z, c.zL.begin() + static_cast<std::ptrdiff_t>(k * zsz));
    if (k == K) break;
    const auto cot = column_cotangent(fields[k], cfg, z, aL);
    auto step = [&](std::vector<double>& v, std::size_t sz, int count) {
      for (int i = 0; i < count; ++i) {
        std::span<const double> cur(v.data() + k * sz + static_cast<std::size_t>(i) * Dm, Dm);
        std::span<double> nxt(v.data() + (k + 1) * sz + static_cast<std::size_t>(i) * Dm, Dm);
        std::ranges::fill(drift, 0.0);
        add_drift_column(fields[k], cfg, cot, cur, drift);
        euler(cur, drift, dt, nxt);
      }
    };
    step(c.fibers, fsz, c.rows);
    step(c.riders, psz, c.passengers);
  }
  return c;
}

namespace {

// Moves every trajectory of `e` from node k to k + 1 under drift field f.
void advance(PathEnsemble& e, int k, const DriftField& f, const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int M = e.counts().M;
  const int ML = e.counts().M_L;
  const int Mm = e.counts().M_Lm1;
  const int mids = e.middle_count();
  const double dt = e.grid().dt();
  const std::size_t n1 = M;
  const std::size_t nmid = static_cast<std::size_t>(mids) * M;
  const std::size_t total = n1 + nmid + static_cast<std::size_t>(ML) * Mm;
  parallel_for(total, [&](std::size_t idx) {
    std::vector<double> drift;
    if (idx < n1) {
      const int p = static_cast<int>(idx);
      drift.assign(cfg.param_dim(1), 0.0);
      add_drift_layer1(f, cfg, e.a0(p), e.layer1(k, p), drift);
      euler(e.layer1(k, p), drift, dt, e.layer1(k + 1, p));
    } else if (idx < n1 + nmid) {
      const int l = 2 + static_cast<int>((idx - n1) / M);
      const int p = static_cast<int>((idx - n1) % M);
      drift.assign(cfg.param_dim(l), 0.0);
      add_drift_middle(f, cfg, l, e.mid(l, k, p), drift);
      euler(e.mid(l, k, p), drift, dt, e.mid(l, k + 1, p));
    } else {
      const std::size_t q = idx - n1 - nmid;
      const int j = static_cast<int>(q / Mm);
      const int i = static_cast<int>(q % Mm);
      drift.assign(cfg.param_dim(L - 1), 0.0);
      add_drift_fiber(f, cfg, j, e.fiber(k, i, j), drift);
      euler(e.fiber(k, i, j), drift, dt, e.fiber(k + 1, i, j));
    }
  });
}

void check_ensemble(const PathEnsemble& e, const NetworkConfig& cfg) {
  if (e.L() != cfg.L) throw DimensionError("ensemble layer count does not match network");
  for (int l = 0; l <= cfg.L; ++l)
    if (e.D()[l] != cfg.param_dim(l)) throw DimensionError("ensemble parameter dims");
}

}  // namespace

PathEnsemble psi(const PathEnsemble& in, const DataDistribution& data, const LRSchedule& sched,
                 const NetworkConfig& cfg, MbarCoupling coupling) {
  check_ensemble(in, cfg);
  PathEnsemble out = in;
  for (int k = 0; k < in.grid().K; ++k) {
    const DriftField f = drift_field(in.snapshot(k), data, sched(in.grid().time(k)), cfg, coupling);
    advance(out, k, f, cfg);
  }
  if (!out.all_finite()) throw DivergenceError("psi: non-finite trajectory");
  return out;
}

PathEnsemble integrate_coupled(const PathEnsemble& seed, const DataDistribution& data,
                               const LRSchedule& sched, const NetworkConfig& cfg,
                               MbarCoupling coupling) {
  check_ensemble(seed, cfg);
  PathEnsemble out = seed;
  for (int k = 0; k < seed.grid().K; ++k) {
    const DriftField f = drift_field(out.snapshot(k), data, sched(out.grid().time(k)), cfg, coupling);
    advance(out, k, f, cfg);
  }
  if (!out.all_finite()) throw DivergenceError("integrate_coupled: non-finite trajectory");
  return out;
}

double ensemble_distance(const PathEnsemble& e1, const PathEnsemble& e2) {
  if (!e1.same_structure(e2)) throw ContractViolation("ensemble_distance: structures differ");
  if (!e1.same_initial(e2))
    throw ContractViolation("ensemble_distance: initial data differ, identity coupling invalid");
  const int K = e1.grid().K;
  const auto& c = e1.counts();
  auto block = [&](int count, auto&& get) {
    double sum = 0.0;
    for (int p = 0; p < count; ++p) {
      double sup = 0.0;
      for (int k = 0; k <= K; ++k) sup = std::max(sup, linalg::distance(get(e1, k, p), get(e2, k, p)));
      sum += sup;
    }
    return sum / count;
  };
  double total = block(c.M, [](const PathEnsemble& e, int k, int p) { return e.layer1(k, p); });
  for (int l = 2; l <= e1.L() - 2; ++l)
    total += block(c.M, [l](const PathEnsemble& e, int k, int p) { return e.mid(l, k, p); });
  const int Mm = c.M_Lm1;
  total += block(c.M_L * Mm, [Mm](const PathEnsemble& e, int k, int p) {
    return e.fiber(k, p % Mm, p / Mm);
  });
  return total;
}

double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("wasserstein_1d: unequal sample counts");
  if (a.empty()) return 0.0;
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::ranges::sort(x);
  std::ranges::sort(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

PicardResult picard_solve(const PathEnsemble& seed, const DataDistribution& data,
                          const LRSchedule& sched, const NetworkConfig& cfg,
                          const PicardOptions& opts) {
  if (!(opts.tol >= 0.0)) throw ConfigError("ensemble.tol", "must be >= 0");
  if (opts.max_iter < 1) throw ConfigError("ensemble.max_iter", "must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  PicardResult res{seed, {}};
  res.report.tol = opts.tol;
  for (int m = 0; m < opts.max_iter; ++m) {
    PathEnsemble next = psi(res.ensemble, data, sched, cfg, opts.coupling);
    const double delta = ensemble_distance(next, res.ensemble);
    res.ensemble = std::move(next);
    res.report.deltas.push_back(delta);
    res.report.iterations = m + 1;
    if (delta <= opts.tol) {
      res.report.converged = true;
      break;
    }
  }
  res.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

double drift_bound(const NetworkConfig& cfg, const LRSchedule& sched) {
  return 2.0 * sched.bound() * std::pow(cfg.C, cfg.L + 3);
}

double r_theory(const NetworkConfig& cfg, const LRSchedule& sched) {
  return (1.0 + cfg.C) * drift_bound(cfg, sched);
}

double max_increment_rate(const PathEnsemble& e) {
  const int K = e.grid().K;
  const double dt = e.grid().dt();
  const auto& c = e.counts();
  double best = 0.0;
  auto scan = [&](int count, auto&& get) {
    for (int p = 0; p < count; ++p)
      for (int k = 0; k < K; ++k) best = std::max(best, linalg::distance(get(k + 1, p), get(k, p)) / dt);
  };
  scan(c.M, [&](int k, int p) { return e.layer1(k, p); });
  for (int l = 2; l <= e.L() - 2; ++l) scan(c.M, [&](int k, int p) { return e.mid(l, k, p); });
  const int Mm = c.M_Lm1;
  scan(c.M_L * Mm, [&](int k, int p) { return e.fiber(k, p % Mm, p / Mm); });
  return best;
}

SpecialDiagnostics special_diagnostics(const PathEnsemble& fp, const DataDistribution& data,
                                       const LRSchedule& sched, const NetworkConfig& cfg,
                                       const SpecialOptions& opts) {
  check_ensemble(fp, cfg);
  if (!(opts.delta > 0.0)) throw ConfigError("special.delta", "must be > 0");
  const int L = cfg.L;
  const int K = fp.grid().K;
  const int Dm = cfg.param_dim(L - 1);
  const int DL = cfg.param_dim(L);
  const int probes = opts.probes > 0 ? opts.probes : Dm + DL;
  const auto fields = drift_fields(fp, data, sched, cfg, opts.coupling);

  SpecialDiagnostics out;
  out.R_hat = max_increment_rate(fp);
  out.C_drift = drift_bound(cfg, sched);
  out.R_theory = r_theory(cfg, sched);
  out.lipschitz_ok = out.R_hat <= out.C_drift * (1 + 1e-9);
  for (int k = 0; k <= K; ++k) out.times.push_back(fp.grid().time(k));

  std::vector<std::vector<double>> per(probes);
  parallel_for(probes, [&](std::size_t pi) {
    const int p = static_cast<int>(pi);
    const int i = p % fp.counts().M_Lm1;
    const int j = p % fp.counts().M_L;
    const int q = p % (Dm + DL);
    const auto base = fp.fiber_init(i);
    const auto aL = fp.aL(j);
    std::vector<double> plus(base.begin(), base.end());
    std::vector<double> minus = plus;
    std::vector<double> aplus(aL.begin(), aL.end());
    std::vector<double> aminus = aplus;
    if (q < Dm) {
      plus[q] += opts.delta;
      minus[q] -= opts.delta;
    } else {
      aplus[q - Dm] += opts.delta;
      aminus[q - Dm] -= opts.delta;
    }
    const double gap = 2.0 * opts.delta;
    auto& s = per[pi];
    s.resize(K + 1);
    if (q < Dm) {
      std::vector<double> riders = plus;
      riders.insert(riders.end(), minus.begin(), minus.end());
      const ColumnFlow c = flow_column(fp, fields, aL, riders, cfg);
      for (int k = 0; k <= K; ++k) s[k] = linalg::distance(c.rider(k, 0, Dm), c.rider(k, 1, Dm)) / gap;
    } else {
      const ColumnFlow cp = flow_column(fp, fields, aplus, base, cfg);
      const ColumnFlow cm = flow_column(fp, fields, aminus, base, cfg);
      for (int k = 0; k <= K; ++k) s[k] = linalg::distance(cp.rider(k, 0, Dm), cm.rider(k, 0, Dm)) / gap;
    }
  });
  out.s.assign(K + 1, 0.0);
  for (const auto& s : per)
    for (int k = 0; k <= K; ++k) out.s[k] = std::max(out.s[k], s[k]);
  return out;
}

}  // namespace mfnet
