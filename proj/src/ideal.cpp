#include "mfnet/ideal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>

#include "mfnet/backprop.hpp"
#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/parallel.hpp"
#include "mfnet/rng.hpp"

namespace mfnet {

MeanFieldFlows make_flows(const PathEnsemble& fp, const DataDistribution& data,
                          const LRSchedule& sched, const NetworkConfig& cfg,
                          MbarCoupling coupling) {
  MeanFieldFlows f;
  f.grid = fp.grid();
  f.coupling = coupling;
  f.fields = drift_fields(fp, data, sched, cfg, coupling);
  return f;
}

int IdealWeights::slot(int k) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), k);
  if (it == nodes.end() || *it != k)
    throw ContractViolation("ideal weights: grid node " + std::to_string(k) + " not stored");
  return static_cast<int>(it - nodes.begin());
}

int IdealWeights::node_of_time(double t) const {
  const double u = t / grid.dt();
  const long k = std::lround(u);
  if (std::abs(u - static_cast<double>(k)) > 1e-6 || k < 0 || k > grid.K)
    throw ContractViolation("time " + std::to_string(t) + " is not a node of the mean-field grid");
  return static_cast<int>(k);
}

std::span<const double> IdealWeights::column(int k, int iL, int D) const {
  const auto& v = column_fibers[slot(k)];
  const std::size_t n = static_cast<std::size_t>(rows) * D;
  return {v.data() + iL * n, n};
}

namespace {

void euler(std::span<const double> cur, std::span<const double> drift, double dt,
           std::span<double> next) {
  for (std::size_t c = 0; c < cur.size(); ++c) next[c] = cur[c] + dt * drift[c];
}

// Integrates one passenger whose drift only depends on its own state;
// writes the state at every kept node.
template <class Drift>
void flow_passenger(std::span<const double> init, int K, double dt,
                    const std::vector<int>& nodes, Drift&& drift,
                    const std::function<std::span<double>(int)>& sink) {
  std::vector<double> cur(init.begin(), init.end());
  std::vector<double> next(cur.size());
  std::vector<double> f(cur.size());
  std::size_t s = 0;
  for (int k = 0; k <= K; ++k) {
    if (s < nodes.size() && nodes[s] == k) {
      std::ranges::copy(cur, sink(static_cast<int>(s)).begin());
      ++s;
    }
    if (k == K) break;
    std::ranges::fill(f, 0.0);
    drift(k, std::span<const double>(cur), std::span<double>(f));
    euler(cur, f, dt, next);
    cur.swap(next);
  }
}

}  // namespace

IdealWeights build_ideal(const ParamVector& params0, const PathEnsemble& fp,
                         const MeanFieldFlows& flows, const NetworkConfig& cfg,
                         const IdealOptions& opts) {
  if (opts.report != nullptr && !opts.report->converged)
    throw ContractViolation("build_ideal: fixed point did not converge");
  if (!params0.same_shape(ParamVector(cfg))) throw DimensionError("build_ideal: weight shapes");
  if (fp.L() != cfg.L) throw DimensionError("build_ideal: ensemble layer count");
  const int K = fp.grid().K;
  if (static_cast<int>(flows.fields.size()) != K + 1)
    throw ContractViolation("build_ideal: flows do not match the fixed point grid");
  const int L = cfg.L;
  const int N = cfg.N;
  const double dt = fp.grid().dt();

  IdealWeights w;
  w.grid = fp.grid();
  w.rows = fp.counts().M_Lm1;
  if (opts.keep_nodes.empty()) {
    for (int k = 0; k <= K; ++k) w.nodes.push_back(k);
  } else {
    w.nodes = opts.keep_nodes;
    std::ranges::sort(w.nodes);
    w.nodes.erase(std::unique(w.nodes.begin(), w.nodes.end()), w.nodes.end());
    if (w.nodes.front() < 0 || w.nodes.back() > K)
      throw ContractViolation("build_ideal: kept node outside the grid");
  }
  w.params.assign(w.nodes.size(), params0);
  const int Dm = cfg.param_dim(L - 1);
  w.column_fibers.assign(w.nodes.size(), std::vector<double>(static_cast<std::size_t>(N) * w.rows * Dm));
  const auto& fields = flows.fields;

  parallel_for(static_cast<std::size_t>(N) * N, [&](std::size_t e) {
    const int i1 = static_cast<int>(e / N);
    const int i2 = static_cast<int>(e % N);
    const auto a0 = params0.edge(0, 0, i1);
    flow_passenger(
        params0.edge(1, i1, i2), K, dt, w.nodes,
        [&](int k, std::span<const double> th, std::span<double> f) {
          add_drift_layer1(fields[k], cfg, a0, th, f);
        },
        [&](int s) { return w.params[s].edge(1, i1, i2); });
  });

  for (int l = 2; l <= L - 2; ++l) {
    // Edges sharing an initial value share one flow.
    std::map<std::vector<double>, std::vector<int>> groups;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const auto v = params0.edge(l, i, j);
        groups[std::vector<double>(v.begin(), v.end())].push_back(i * N + j);
      }
    std::vector<const std::pair<const std::vector<double>, std::vector<int>>*> order;
    for (const auto& g : groups) order.push_back(&g);
    parallel_for(order.size(), [&](std::size_t gi) {
      const auto& [init, members] = *order[gi];
      const int first = members.front();
      flow_passenger(
          init, K, dt, w.nodes,
          [&](int k, std::span<const double> th, std::span<double> f) {
            add_drift_middle(fields[k], cfg, l, th, f);
          },
          [&](int s) { return w.params[s].edge(l, first / N, first % N); });
      for (std::size_t s = 0; s < w.nodes.size(); ++s) {
        const auto src = w.params[s].edge(l, first / N, first % N);
        for (std::size_t m = 1; m < members.size(); ++m)
          std::ranges::copy(src, w.params[s].edge(l, members[m] / N, members[m] % N).begin());
      }
    });
  }

  parallel_for(N, [&](std::size_t col) {
    const int iL = static_cast<int>(col);
    std::vector<double> riders;
    for (int i = 0; i < N; ++i) {
      const auto v = params0.edge(L - 1, i, iL);
      riders.insert(riders.end(), v.begin(), v.end());
    }
    const ColumnFlow c = flow_column(fp, fields, params0.edge(L, iL, 0), riders, cfg);
    const std::size_t fsz = static_cast<std::size_t>(w.rows) * Dm;
    for (std::size_t s = 0; s < w.nodes.size(); ++s) {
      const int k = w.nodes[s];
      for (int i = 0; i < N; ++i)
        std::ranges::copy(c.rider(k, i, Dm), w.params[s].edge(L - 1, i, iL).begin());
      std::copy_n(c.fibers.begin() + static_cast<std::ptrdiff_t>(k * fsz), fsz,
                  w.column_fibers[s].begin() + static_cast<std::ptrdiff_t>(iL * fsz));
    }
  });

  for (const auto& p : w.params)
    if (!p.all_finite()) throw DivergenceError("build_ideal: non-finite ideal weights");
  return w;
}

IdealWeights build_ideal(const ParamVector& params0, const PathEnsemble& fp,
                         const DataDistribution& data, const LRSchedule& sched,
                         const NetworkConfig& cfg, const IdealOptions& opts) {
  return build_ideal(params0, fp, make_flows(fp, data, sched, cfg), cfg, opts);
}

double DeltaZ::mean(int l) const {
  const auto& v = norms.at(l);
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

namespace {

DeltaZ delta_z_at(std::span<const double> x, const IdealWeights& ideal, int k,
                  const MeasureSnapshot& snap, const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int N = cfg.N;
  const auto& d = cfg.d;
  const ForwardTrace tr = forward(x, ideal.at_node(k), cfg);
  const MeanFieldTrace mt = zbar_forward(x, snap, cfg);
  DeltaZ out;
  out.norms.resize(L + 2);
  for (int l = 2; l <= L - 1; ++l)
    for (int i = 0; i < N; ++i)
      out.norms[l].push_back(linalg::distance(tr.neuron(l, i, d[l]), mt.zbar[l]));
  const int Dm = cfg.param_dim(L - 1);
  std::vector<double> s(d[L]);
  for (int iL = 0; iL < N; ++iL) {
    const auto fib = ideal.column(k, iL, Dm);
    std::vector<double> zc(d[L], 0.0);
    for (int i = 0; i < ideal.rows; ++i) {
      cfg.act[L - 1].eval(mt.zbar[L - 1], fib.subspan(static_cast<std::size_t>(i) * Dm, Dm), s);
      for (int r = 0; r < d[L]; ++r) zc[r] += s[r];
    }
    if (ideal.rows > 1)
      for (auto& v : zc) v /= ideal.rows;
    out.norms[L].push_back(linalg::distance(tr.neuron(L, iL, d[L]), zc));
  }
  out.norms[L + 1].push_back(linalg::distance(tr.z[L + 1], mt.zL1));
  return out;
}

}  // namespace

DeltaZ delta_z(std::span<const double> x, const IdealWeights& ideal, int k,
               const PathEnsemble& fp, const NetworkConfig& cfg) {
  return delta_z_at(x, ideal, k, fp.snapshot(k), cfg);
}

double mean_delta_z(const DataDistribution& data, const IdealWeights& ideal, int k,
                    const PathEnsemble& fp, const NetworkConfig& cfg, int l) {
  if (l < 2 || l > cfg.L + 1) throw ContractViolation("mean_delta_z: layer outside [2, L+1]");
  const MeasureSnapshot snap = fp.snapshot(k);
  std::vector<double> per(data.size());
  parallel_for(data.size(), [&](std::size_t b) {
    per[b] = delta_z_at(data.x(static_cast<int>(b)), ideal, k, snap, cfg).mean(l);
  });
  double s = 0.0;
  for (double v : per) s += v;
  return s / data.size();
}

GradVector ideal_drift(const IdealWeights& ideal, int k, const MeanFieldFlows& flows,
                       const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int N = cfg.N;
  const auto& f = flows.fields.at(k);
  const ParamVector& th = ideal.at_node(k);
  GradVector g(cfg);
  parallel_for(static_cast<std::size_t>(N) * N, [&](std::size_t e) {
    const int i = static_cast<int>(e / N);
    const int j = static_cast<int>(e % N);
    add_drift_layer1(f, cfg, th.edge(0, 0, i), th.edge(1, i, j), g.edge(1, i, j));
    for (int l = 2; l <= L - 2; ++l) add_drift_middle(f, cfg, l, th.edge(l, i, j), g.edge(l, i, j));
  });
  const int Dm = cfg.param_dim(L - 1);
  parallel_for(N, [&](std::size_t col) {
    const int iL = static_cast<int>(col);
    const auto z = column_z(f, cfg, ideal.column(k, iL, Dm), ideal.rows);
    const auto cot = column_cotangent(f, cfg, z, th.edge(L, iL, 0));
    for (int i = 0; i < N; ++i) add_drift_column(f, cfg, cot, th.edge(L - 1, i, iL), g.edge(L - 1, i, iL));
  });
  return g;
}

DeltaGrad delta_grad(int k, const IdealWeights& ideal, const MeanFieldFlows& flows,
                     const DataDistribution& data, const LRSchedule& sched,
                     const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int N = cfg.N;
  const GradVector drift = ideal_drift(ideal, k, flows, cfg);
  const GradVector grad = grad_loss(ideal.at_node(k), data, cfg);
  const double alpha = sched(ideal.grid.time(k));
  const double dt = ideal.grid.dt();

  // Grid derivative: symmetric inside, one-sided at the ends.
  const ParamVector* lo = nullptr;
  const ParamVector* hi = nullptr;
  double span = 0.0;
  auto stored = [&](int n) { return std::ranges::binary_search(ideal.nodes, n); };
  if (stored(k - 1) && stored(k + 1)) {
    lo = &ideal.at_node(k - 1), hi = &ideal.at_node(k + 1), span = 2 * dt;
  } else if (stored(k + 1)) {
    lo = &ideal.at_node(k), hi = &ideal.at_node(k + 1), span = dt;
  } else if (stored(k - 1)) {
    lo = &ideal.at_node(k - 1), hi = &ideal.at_node(k), span = dt;
  }

  DeltaGrad out;
  out.norms.resize(L + 1);
  out.fd_mismatch = lo ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  long count = 0;
  const int D = cfg.max_dim() * (cfg.max_dim() + 1);
  std::vector<double> v(D);
  for (int l = 1; l <= L - 1; ++l) {
    const int Dl = cfg.param_dim(l);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const auto a = drift.edge(l, i, j);
        const auto b = grad.edge(l, i, j);
        for (int c = 0; c < Dl; ++c) v[c] = a[c] + alpha * b[c];
        const double n = linalg::norm(std::span<const double>(v.data(), Dl));
        out.norms[l].push_back(n);
        out.max = std::max(out.max, n);
        total += n;
        ++count;
        if (lo) {
          const auto x0 = lo->edge(l, i, j);
          const auto x1 = hi->edge(l, i, j);
          for (int c = 0; c < Dl; ++c)
            out.fd_mismatch = std::max(out.fd_mismatch, std::abs((x1[c] - x0[c]) / span - a[c]));
        }
      }
  }
  out.mean = total / static_cast<double>(count);
  return out;
}

std::vector<PathIndex> choose_paths(const NetworkConfig& cfg, int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("couple.paths", "must be >= 0");
  std::vector<PathIndex> out;
  out.emplace_back(cfg.L, 0);
  auto rng = make_engine(seed, "paths");
  std::uniform_int_distribution<int> pick(0, cfg.N - 1);
  for (int p = 0; p < count; ++p) {
    PathIndex path(cfg.L);
    for (auto& i : path) i = pick(rng);
    out.push_back(std::move(path));
  }
  return out;
}

double path_error(const ParamVector& a, const ParamVector& b, const PathIndex& path,
                  const NetworkConfig& cfg) {
  const int L = cfg.L;
  if (static_cast<int>(path.size()) != L) throw DimensionError("path_error: path length");
  double s = 0.0;
  for (int l = 0; l <= L; ++l) {
    const int i = l == 0 ? 0 : path[l - 1];
    const int j = l == L ? 0 : path[l];
    s += linalg::distance(a.edge(l, i, j), b.edge(l, i, j));
  }
  return s;
}

CouplingReport coupling_report(const WeightHistory& hist_sgd, const WeightHistory& hist_ctgd,
                               const IdealWeights& ideal, const PathEnsemble& fp,
                               const MeanFieldFlows& flows, const DataDistribution& data,
                               const LRSchedule& sched, const NetworkConfig& cfg,
                               const CouplingOptions& opts) {
  if (!(hist_sgd.initial() == hist_ctgd.initial()) || !(hist_sgd.initial() == ideal.params.front()) ||
      ideal.nodes.front() != 0)
    throw ContractViolation("coupling_report: mismatched initial conditions");
  CouplingReport rep;
  rep.paths = choose_paths(cfg, opts.paths, opts.seed);
  const int L = cfg.L;
  for (const auto& c : hist_sgd.checkpoints) {
    const int k = ideal.node_of_time(c.time);
    CouplingRow r;
    r.step = c.step;
    r.time = c.time;
    const ParamVector tilde = hist_ctgd.at_time(c.time);
    const ParamVector& bar = ideal.at_node(k);
    const MeasureSnapshot snap = fp.snapshot(k);
    r.loss_sgd = loss(c.params, data, cfg);
    r.loss_ctgd = loss(tilde, data, cfg);
    r.loss_ideal = loss(bar, data, cfg);
    r.loss_bar = loss_bar(snap, data, cfg);
    r.gap = std::abs(r.loss_sgd - r.loss_bar);
    r.term1 = std::abs(r.loss_sgd - r.loss_ctgd);
    r.term2 = std::abs(r.loss_ctgd - r.loss_ideal);
    r.term3 = std::abs(r.loss_ideal - r.loss_bar);
    for (const auto& p : rep.paths) r.path_errors.push_back(path_error(c.params, bar, p, cfg));

    std::vector<DeltaZ> dz(data.size());
    parallel_for(data.size(), [&](std::size_t b) {
      dz[b] = delta_z_at(data.x(static_cast<int>(b)), ideal, k, snap, cfg);
    });
    for (const auto& z : dz) {
      r.dz_mean += z.mean(L + 1) / data.size();
      for (int l = 2; l <= L + 1; ++l)
        for (double v : z.norms[l]) r.dz_max = std::max(r.dz_max, v);
    }
    if (opts.gradient_stats) {
      const DeltaGrad g = delta_grad(k, ideal, flows, data, sched, cfg);
      r.dgrad_mean = g.mean;
      r.dgrad_max = g.max;
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

}  // namespace mfnet
