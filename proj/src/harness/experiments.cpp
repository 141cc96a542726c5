#include "mfnet/harness/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>

#include "mfnet/backprop.hpp"
#include "mfnet/error.hpp"
#include "mfnet/rng.hpp"
#include "mfnet/stats.hpp"

namespace mfnet::harness {

namespace fs = std::filesystem;
using io::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool divides(double whole, double part) {
  const double q = whole / part;
  return std::abs(q - std::round(q)) < 1e-9 * std::max(1.0, q);
}

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

void finish(const ExperimentConfig& c, const std::string& sub, std::vector<std::string> files,
            std::ostream& log) {
  files.push_back("manifest.json");
  write_json(c.out_dir / "manifest.json", manifest(c, sub, files));
  log << sub << ": wrote " << files.size() << " files to " << c.out_dir.string() << "\n";
}

}  // namespace

std::uint64_t sweep_seed(std::uint64_t master, int s) {
  return derive_seed(master, "sweep", static_cast<std::uint64_t>(s));
}

json manifest(const ExperimentConfig& c, const std::string& subcommand,
              const std::vector<std::string>& files) {
  json m;
  m["tool"] = "mfnet";
  m["version"] = MFNET_VERSION;
  m["subcommand"] = subcommand;
  m["config_hash"] = io::hex64(io::fnv1a(c.source.dump()));
  m["seed"] = c.seed;
  m["files"] = files;
  m["config"] = c.source;
  return m;
}

FixedPoint solve_fixed_point(const ExperimentConfig& c, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const DataDistribution data = c.data();
  PathEnsemble start = sample_ensemble(c.net, c.init, c.grid(), c.ensemble.counts);
  if (c.ensemble.warm_start) start = integrate_coupled(start, data, c.sched, c.net, c.ensemble.coupling);
  PicardResult r = picard_solve(start, data, c.sched, c.net, c.picard());
  log << "picard: " << r.report.iterations << " iterations, last delta "
      << (r.report.deltas.empty() ? 0.0 : r.report.deltas.back())
      << (r.report.converged ? "" : " (NOT converged)") << ", " << seconds_since(t0) << " s\n";
  if (!r.report.converged)
    log << "warning: Picard iteration stopped at max_iter before reaching tol " << c.ensemble.tol
        << "\n";
  return {std::move(r.ensemble), r.report};
}

void run_train(const ExperimentConfig& c, std::ostream& log) {
  fs::create_directories(c.out_dir);
  const DataDistribution data = c.data();
  const ParamVector p0 = init_params(c.net, c.init);
  const WeightHistory h = sgd_run(p0, data, c.run, c.sched, c.net);
  std::vector<std::string> files;
  io::write_history(c.out_dir, "sgd", h);
  files.push_back("sgd_manifest.json");

  std::ostringstream csv;
  csv << "step,time,loss_sgd";
  std::vector<GapPoint> gaps;
  WeightHistory hc;
  if (c.train_ctgd) {
    RunSpec rc = c.run;
    rc.T = static_cast<double>(h.total_steps) * c.run.epsilon;
    rc.K = std::max(c.run.K, 10 * h.total_steps);
    hc = ctgd_run(p0, data, rc, c.sched, c.net, checkpoint_times(h));
    gaps = compare_sgd_ctgd(h, hc);
    io::write_history(c.out_dir, "ctgd", hc);
    files.push_back("ctgd_manifest.json");
    csv << ",loss_ctgd,gap";
  }
  csv << "\n";
  for (std::size_t k = 0; k < h.checkpoints.size(); ++k) {
    const auto& cp = h.checkpoints[k];
    csv << cp.step << "," << io::num(cp.time) << "," << io::num(loss(cp.params, data, c.net));
    if (c.train_ctgd)
      csv << "," << io::num(loss(hc.at_time(cp.time), data, c.net)) << "," << io::num(gaps[k].gap);
    csv << "\n";
  }
  io::write_file(c.out_dir / "train.csv", csv.str());
  files.push_back("train.csv");

  json s;
  s["steps"] = h.total_steps;
  s["loss_initial"] = loss(h.initial(), data, c.net);
  s["loss_terminal"] = loss(h.terminal(), data, c.net);
  if (c.train_ctgd) s["gap_terminal"] = gaps.back().gap;
  write_json(c.out_dir / "summary.json", s);
  files.push_back("summary.json");
  log << "train: " << h.total_steps << " SGD steps, loss " << s["loss_initial"].get<double>()
      << " -> " << s["loss_terminal"].get<double>() << "\n";
  finish(c, "train", files, log);
}

void run_meanfield(const ExperimentConfig& c, std::ostream& log) {
  fs::create_directories(c.out_dir);
  const DataDistribution data = c.data();
  const FixedPoint fp = solve_fixed_point(c, log);
  std::vector<std::string> files;
  io::write_ensemble(c.out_dir / "fixed_point", fp.ensemble);
  files.insert(files.end(), {"fixed_point.json", "fixed_point.bin"});
  write_json(c.out_dir / "picard.json", io::picard_to_json(fp.report, c.record_wall_time));
  files.push_back("picard.json");

  SpecialOptions so;
  so.coupling = c.ensemble.coupling;
  const SpecialDiagnostics sd = special_diagnostics(fp.ensemble, data, c.sched, c.net, so);
  write_json(c.out_dir / "special.json", io::special_to_json(sd));
  files.push_back("special.json");

  std::ostringstream csv;
  csv << "k,time,loss_bar\n";
  for (int k = 0; k <= c.ensemble.K; ++k)
    csv << k << "," << io::num(c.grid().time(k)) << ","
        << io::num(loss_bar(fp.ensemble.snapshot(k), data, c.net)) << "\n";
  io::write_file(c.out_dir / "meanfield.csv", csv.str());
  files.push_back("meanfield.csv");
  log << "meanfield: R_hat " << sd.R_hat << " (C_drift " << sd.C_drift << ")\n";
  finish(c, "meanfield", files, log);
}

void run_couple(const ExperimentConfig& c, std::ostream& log) {
  const double h = c.run.T / c.ensemble.K;
  if (!divides(c.run.T, c.run.epsilon))
    throw ConfigError("run.epsilon", "couple needs T / epsilon to be an integer");
  if (!divides(c.run.epsilon, h))
    throw ConfigError("run.epsilon", "couple needs epsilon to be a multiple of T / ensemble.K");
  fs::create_directories(c.out_dir);
  const DataDistribution data = c.data();
  std::vector<std::string> files;

  PathEnsemble fp = [&] {
    if (!c.fixed_point.empty()) {
      log << "couple: loading fixed point " << c.fixed_point << "\n";
      return io::read_ensemble(c.fixed_point, c.net);
    }
    FixedPoint solved = solve_fixed_point(c, log);
    io::write_ensemble(c.out_dir / "fixed_point", solved.ensemble);
    files.insert(files.end(), {"fixed_point.json", "fixed_point.bin"});
    return std::move(solved.ensemble);
  }();
  if (std::abs(fp.grid().T - c.run.T) > 1e-12 || fp.grid().K != c.ensemble.K)
    throw ConfigError("couple.fixed_point", "time grid does not match run.T / ensemble.K");
  // The ideal particles are only meaningful at an actual fixed point.
  const double residual = ensemble_distance(psi(fp, data, c.sched, c.net, c.ensemble.coupling), fp);
  const double accept = std::max(c.ensemble.tol, 1e-6);
  if (!(residual <= accept))
    throw Error("fixed point rejected: |psi(mu) - mu| = " + io::num(residual) + " exceeds " +
                io::num(accept));

  const ParamVector p0 = init_params(c.net, c.init);
  const WeightHistory hs = sgd_run(p0, data, c.run, c.sched, c.net);
  RunSpec rc = c.run;
  rc.K = std::max(c.run.K, 10 * hs.total_steps);
  const WeightHistory hc = ctgd_run(p0, data, rc, c.sched, c.net, checkpoint_times(hs));

  const MeanFieldFlows flows = make_flows(fp, data, c.sched, c.net, c.ensemble.coupling);
  IdealOptions io_opts;
  for (const auto& cp : hs.checkpoints)
    io_opts.keep_nodes.push_back(static_cast<int>(std::lround(cp.time / h)));
  for (int k : std::vector<int>(io_opts.keep_nodes))
    for (int nb : {k - 1, k + 1})
      if (nb >= 0 && nb <= c.ensemble.K) io_opts.keep_nodes.push_back(nb);
  std::sort(io_opts.keep_nodes.begin(), io_opts.keep_nodes.end());
  io_opts.keep_nodes.erase(std::unique(io_opts.keep_nodes.begin(), io_opts.keep_nodes.end()),
                           io_opts.keep_nodes.end());
  const IdealWeights ideal = build_ideal(p0, fp, flows, c.net, io_opts);

  CouplingOptions co;
  co.paths = c.paths;
  co.seed = derive_seed(c.seed, "paths");
  const CouplingReport rep = coupling_report(hs, hc, ideal, fp, flows, data, c.sched, c.net, co);
  io::write_file(c.out_dir / "coupling.csv", io::coupling_csv(rep));
  files.push_back("coupling.csv");
  json s = io::coupling_summary(rep);
  s["fixed_point_residual"] = residual;
  write_json(c.out_dir / "coupling_summary.json", s);
  files.push_back("coupling_summary.json");
  log << "couple: terminal gap " << rep.rows.back().gap << "\n";
  finish(c, "couple", files, log);
}

double sweep_metric(const ExperimentConfig& c, int N, double epsilon, int s,
                    const PathEnsemble* fp, const MeanFieldFlows* flows) {
  const NetworkConfig cfg = c.net.with_width(N);
  const ExperimentConfig cs = c.with_seed(sweep_seed(c.seed, s));
  const DataDistribution data = c.data();
  const ParamVector p0 = init_params(cfg, cs.init);
  RunSpec run = cs.run;
  run.epsilon = epsilon;
  const std::string& metric = c.sweep.metric;
  if (metric == "sgd_ctgd") {
    const WeightHistory h = sgd_run(p0, data, run, c.sched, cfg);
    RunSpec rc = run;
    rc.T = static_cast<double>(h.total_steps) * epsilon;
    rc.K = std::max(run.K, 10 * h.total_steps);
    const WeightHistory hc = ctgd_run(p0, data, rc, c.sched, cfg, checkpoint_times(h));
    return compare_sgd_ctgd(h, hc).back().gap;
  }
  if (fp == nullptr || flows == nullptr) throw Error("sweep_metric: " + metric + " needs a fixed point");
  const int K = fp->grid().K;
  if (metric == "loss_gap") {
    const WeightHistory h = sgd_run(p0, data, run, c.sched, cfg);
    return std::abs(loss(h.terminal(), data, cfg) - loss_bar(fp->snapshot(K), data, cfg));
  }
  if (metric == "delta_z") {
    IdealOptions o;
    o.keep_nodes = {K};
    const IdealWeights ideal = build_ideal(p0, *fp, *flows, cfg, o);
    return mean_delta_z(data, ideal, K, *fp, cfg, cfg.L + 1);
  }
  throw ConfigError("sweep.metric", "unknown metric '" + metric + "'");
}

namespace {

using SweepKey = std::tuple<int, std::string, int>;  // N, epsilon (round-trip text), seed

struct SweepRow {
  double value = 0.0;
  std::string wall;
};

std::map<SweepKey, SweepRow> read_results(const fs::path& path) {
  std::map<SweepKey, SweepRow> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() < 4) throw Error("malformed row in " + path.string() + ": " + line);
    rows[{std::stoi(f[0]), f[1], std::stoi(f[2])}] = {std::stod(f[3]), f.size() > 4 ? f[4] : ""};
  }
  return rows;
}

json axis_summary(const std::vector<double>& xs, const std::vector<std::vector<double>>& samples,
                  int resamples, std::uint64_t seed) {
  json j;
  j["x"] = xs;
  j["mean"] = json::array();
  j["sd"] = json::array();
  for (const auto& s : samples) {
    j["mean"].push_back(stats::mean(s));
    j["sd"].push_back(s.size() > 1 ? stats::stddev(s) : 0.0);
  }
  bool positive = xs.size() >= 2;
  for (const auto& s : samples)
    for (double v : s) positive = positive && v > 0.0;
  if (!positive) {
    j["slope"] = nullptr;
    return j;
  }
  const stats::SlopeCI ci = stats::bootstrap_loglog(xs, samples, resamples, seed);
  j["slope"] = {{"value", ci.slope}, {"lo", ci.lo}, {"hi", ci.hi}, {"resamples", ci.resamples}};
  return j;
}

}  // namespace

void run_sweep(const ExperimentConfig& c, std::ostream& log) {
  const auto& sw = c.sweep;
  if (sw.metric == "loss_gap")
    for (std::size_t i = 0; i < sw.epsilon.size(); ++i)
      if (!divides(c.run.T, sw.epsilon[i]))
        throw ConfigError("sweep.epsilon[" + std::to_string(i) + "]",
                          "loss_gap needs T / epsilon to be an integer");
  fs::create_directories(c.out_dir);
  std::vector<std::string> files;

  std::optional<PathEnsemble> fp;
  std::optional<MeanFieldFlows> flows;
  if (sw.metric != "sgd_ctgd") {
    const fs::path ref = c.out_dir / "reference";
    if (fs::exists(ref.string() + ".json")) {
      log << "sweep: reusing " << ref.string() << ".json\n";
      fp = io::read_ensemble(ref, c.net);
    } else {
      FixedPoint solved = solve_fixed_point(c, log);
      io::write_ensemble(ref, solved.ensemble);
      fp = std::move(solved.ensemble);
    }
    flows = make_flows(*fp, c.data(), c.sched, c.net, c.ensemble.coupling);
    files.insert(files.end(), {"reference.json", "reference.bin"});
  }

  const fs::path results = c.out_dir / "results.csv";
  auto rows = read_results(results);
  auto save = [&] {
    std::ostringstream csv;
    csv << "N,epsilon,seed,value" << (c.record_wall_time ? ",wall_seconds" : "") << "\n";
    for (int N : sw.N)
      for (double e : sw.epsilon)
        for (int s = 0; s < sw.seeds; ++s) {
          const auto it = rows.find({N, io::num(e), s});
          if (it == rows.end()) continue;
          csv << N << "," << io::num(e) << "," << s << "," << io::num(it->second.value);
          if (c.record_wall_time) csv << "," << it->second.wall;
          csv << "\n";
        }
    io::write_file(results, csv.str());
  };
  std::size_t done = 0;
  for (int N : sw.N)
    for (double e : sw.epsilon)
      for (int s = 0; s < sw.seeds; ++s) {
        const SweepKey key{N, io::num(e), s};
        if (rows.count(key)) {
          ++done;
          continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const double v = sweep_metric(c, N, e, s, fp ? &*fp : nullptr, flows ? &*flows : nullptr);
        rows[key] = {v, io::num(seconds_since(t0))};
        save();
        log << "sweep: N=" << N << " epsilon=" << io::num(e) << " seed=" << s << " -> " << v << "\n";
      }
  if (done > 0) log << "sweep: resumed, " << done << " points already present\n";
  save();
  files.push_back("results.csv");

  auto sample = [&](int N, double e) {
    std::vector<double> v;
    for (int s = 0; s < sw.seeds; ++s) v.push_back(rows.at({N, io::num(e), s}).value);
    return v;
  };
  const std::uint64_t boot_seed = derive_seed(c.seed, "bootstrap");
  json summary;
  summary["metric"] = sw.metric;
  summary["seeds"] = sw.seeds;
  summary["by_N"] = json::array();
  for (double e : sw.epsilon) {
    std::vector<double> xs;
    std::vector<std::vector<double>> samples;
    for (int N : sw.N) {
      xs.push_back(N);
      samples.push_back(sample(N, e));
    }
    json a = axis_summary(xs, samples, sw.bootstrap, boot_seed);
    a["epsilon"] = e;
    summary["by_N"].push_back(a);
  }
  summary["by_epsilon"] = json::array();
  for (int N : sw.N) {
    std::vector<double> xs;
    std::vector<std::vector<double>> samples;
    for (double e : sw.epsilon) {
      xs.push_back(e);
      samples.push_back(sample(N, e));
    }
    json a = axis_summary(xs, samples, sw.bootstrap, boot_seed);
    a["N"] = N;
    summary["by_epsilon"].push_back(a);
  }
  write_json(c.out_dir / "summary.json", summary);
  files.push_back("summary.json");
  finish(c, "sweep", files, log);
}

}  // namespace mfnet::harness
