#include "mfnet/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mfnet/backprop.hpp"
#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/rng.hpp"

namespace mfnet {

const InitLayer& InitSpec::layer(int l) const {
  if (layers.empty()) throw ConfigError("init.layers", "empty");
  if (layers.size() == 1) return layers.front();
  return layers.at(static_cast<std::size_t>(l));
}

void InitSpec::validate(const NetworkConfig& cfg) const {
  if (layers.empty()) throw ConfigError("init.layers", "must not be empty");
  if (layers.size() != 1 && static_cast<int>(layers.size()) != cfg.L + 1)
    throw ConfigError("init.layers", "need 1 or L + 1 entries");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    const std::string p = "init.layers[" + std::to_string(l) + "]";
    if (s.family != "gaussian" && s.family != "uniform")
      throw ConfigError(p + ".family", "unknown family '" + s.family + "'");
    if (!std::isfinite(s.mean)) throw ConfigError(p + ".mean", "must be finite");
    if (!(s.scale >= 0.0) || !std::isfinite(s.scale))
      throw ConfigError(p + ".scale", "must be finite and >= 0");
  }
}

void InitSpec::draw(int l, std::mt19937_64& rng, std::span<double> out) const {
  const auto& s = layer(l);
  if (s.family == "uniform") {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : out) v = s.mean + s.scale * u(rng);
  } else {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : out) v = s.mean + s.scale * g(rng);
  }
}

LRSchedule LRSchedule::constant(double value) { return {Kind::Constant, value, 1.0}; }
LRSchedule LRSchedule::exp_decay(double value, double tau) { return {Kind::ExpDecay, value, tau}; }
LRSchedule LRSchedule::inverse(double value, double tau) { return {Kind::Inverse, value, tau}; }

double LRSchedule::operator()(double t) const {
  switch (kind_) {
    case Kind::Constant: return value_;
    case Kind::ExpDecay: return value_ * std::exp(-t / tau_);
    case Kind::Inverse: return value_ / (1.0 + t / tau_);
  }
  return value_;
}

void LRSchedule::check_against(const NetworkConfig& cfg) const {
  if (!(value_ >= 0.0) || value_ > cfg.C)
    throw ContractViolation("learning rate must lie in [0, C]");
  if (kind_ != Kind::Constant && !(tau_ > 0.0)) throw ContractViolation("schedule tau must be > 0");
}

long RunSpec::sgd_steps() const {
  // Guard against T / epsilon landing a hair above an integer.
  return static_cast<long>(std::ceil(T / epsilon - 1e-9));
}

long RunSpec::ctgd_steps() const { return K > 0 ? K : 10 * sgd_steps(); }

void RunSpec::validate() const {
  if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("run.T", "must be > 0");
  if (!(epsilon > 0.0) || epsilon > T) throw ConfigError("run.epsilon", "must be in (0, T]");
  if (K < 0) throw ConfigError("run.K_ctgd", "must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("run.checkpoint_every", "must be >= 0");
}

ParamVector WeightHistory::at_time(double t) const {
  if (checkpoints.empty()) throw ContractViolation("at_time: empty history");
  const double u = t / dt;
  const long lo = static_cast<long>(std::floor(u + 1e-9));
  const double frac = u - static_cast<double>(lo);
  auto find = [&](long step) -> const Checkpoint* {
    auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), step,
                               [](const Checkpoint& c, long s) { return c.step < s; });
    return (it != checkpoints.end() && it->step == step) ? &*it : nullptr;
  };
  const Checkpoint* a = find(lo);
  if (a == nullptr) throw ContractViolation("at_time: grid node not stored");
  if (std::abs(frac) < 1e-9 || lo >= total_steps) return a->params;
  const Checkpoint* b = find(lo + 1);
  if (b == nullptr) throw ContractViolation("at_time: grid node not stored");
  ParamVector out = a->params;
  for (int l = 0; l < out.layer_count(); ++l) {
    auto o = out.layer(l);
    const auto bl = b->params.layer(l);
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += frac * (bl[k] - o[k]);
  }
  return out;
}

ParamVector init_params(const NetworkConfig& cfg, const InitSpec& init) {
  init.validate(cfg);
  ParamVector p(cfg);
  // One stream per edge so any edge can be regenerated alone.
  for (int l = 0; l <= cfg.L; ++l)
    for (int i = 0; i < cfg.width(l); ++i)
      for (int j = 0; j < cfg.width(l + 1); ++j) {
        auto rng = make_engine(init.seed, "init", static_cast<std::uint64_t>(l),
                               static_cast<std::uint64_t>(i) * cfg.width(l + 1) + j);
        init.draw(l, rng, p.edge(l, i, j));
      }
  return p;
}

namespace {

long cadence(const RunSpec& spec, long steps) {
  if (spec.checkpoint_every > 0) return spec.checkpoint_every;
  return std::max(1L, (steps + 99) / 100);
}

void check_start(const ParamVector& params0, const DataDistribution& data, const RunSpec& spec,
                 const LRSchedule& sched, const NetworkConfig& cfg) {
  spec.validate();
  if (!params0.same_shape(ParamVector(cfg))) throw DimensionError("initial weights shape");
  if (!params0.all_finite()) throw ContractViolation("initial weights not finite");
  data.check_against(cfg);
  sched.check_against(cfg);
}

void step_update(ParamVector& theta, const GradVector& g, double scale) {
  for (int l = 0; l < theta.layer_count(); ++l) linalg::axpy(-scale, g.layer(l), theta.layer(l));
}

void ensure_finite(const ParamVector& theta, const char* what, long step) {
  if (!theta.all_finite())
    throw DivergenceError(std::string(what) + ": non-finite weights at step " +
                          std::to_string(step));
}

}  // namespace

WeightHistory sgd_run(const ParamVector& params0, const DataDistribution& data,
                      const RunSpec& spec, const LRSchedule& sched, const NetworkConfig& cfg) {
  check_start(params0, data, spec, sched, cfg);
  WeightHistory h;
  h.process = ProcessKind::SGD;
  h.spec = spec;
  h.total_steps = spec.sgd_steps();
  h.dt = spec.epsilon;
  const long every = cadence(spec, h.total_steps);

  auto rng = make_engine(spec.seed, "sgd-samples");
  ParamVector theta = params0;
  h.checkpoints.push_back({0, 0.0, theta});
  for (long k = 0; k < h.total_steps; ++k) {
    const int b = data.sample(rng);
    const GradVector g = grad_hat(data.x(b), data.y(b), theta, cfg);
    step_update(theta, g, spec.epsilon * sched(static_cast<double>(k) * spec.epsilon));
    ensure_finite(theta, "sgd", k + 1);
    const long s = k + 1;
    if (s % every == 0 || s == h.total_steps)
      h.checkpoints.push_back({s, static_cast<double>(s) * spec.epsilon, theta});
  }
  return h;
}

WeightHistory ctgd_run(const ParamVector& params0, const DataDistribution& data,
                       const RunSpec& spec, const LRSchedule& sched, const NetworkConfig& cfg,
                       std::span<const double> required_times) {
  check_start(params0, data, spec, sched, cfg);
  WeightHistory h;
  h.process = ProcessKind::CTGD;
  h.spec = spec;
  h.total_steps = spec.ctgd_steps();
  h.dt = spec.T / static_cast<double>(h.total_steps);
  const long every = cadence(spec, h.total_steps);

  std::set<long> keep;
  for (double t : required_times) {
    const double u = t / h.dt;
    const long lo = std::clamp(static_cast<long>(std::floor(u + 1e-9)), 0L, h.total_steps);
    keep.insert(lo);
    if (u - static_cast<double>(lo) > 1e-9 && lo < h.total_steps) keep.insert(lo + 1);
  }

  const double dt = h.dt;
  auto drift = [&](const ParamVector& th, double t) {
    GradVector g = grad_loss(th, data, cfg);
    for (int l = 0; l < g.layer_count(); ++l) linalg::scale(-sched(t), g.layer(l));
    return g;
  };

  ParamVector theta = params0;
  h.checkpoints.push_back({0, 0.0, theta});
  for (long k = 0; k < h.total_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (spec.integrator == Integrator::Euler) {
      step_update(theta, grad_loss(theta, data, cfg), dt * sched(t));
    } else {
      auto shifted = [&](const GradVector& f, double c) {
        ParamVector out = theta;
        for (int l = 0; l < out.layer_count(); ++l) linalg::axpy(c, f.layer(l), out.layer(l));
        return out;
      };
      const GradVector k1 = drift(theta, t);
      const GradVector k2 = drift(shifted(k1, 0.5 * dt), t + 0.5 * dt);
      const GradVector k3 = drift(shifted(k2, 0.5 * dt), t + 0.5 * dt);
      const GradVector k4 = drift(shifted(k3, dt), t + dt);
      for (int l = 0; l < theta.layer_count(); ++l) {
        linalg::axpy(dt / 6.0, k1.layer(l), theta.layer(l));
        linalg::axpy(dt / 3.0, k2.layer(l), theta.layer(l));
        linalg::axpy(dt / 3.0, k3.layer(l), theta.layer(l));
        linalg::axpy(dt / 6.0, k4.layer(l), theta.layer(l));
      }
    }
    const long s = k + 1;
    ensure_finite(theta, "ctgd", s);
    if (s % every == 0 || s == h.total_steps || keep.contains(s))
      h.checkpoints.push_back({s, static_cast<double>(s) * dt, theta});
  }
  return h;
}

std::vector<double> checkpoint_times(const WeightHistory& hist) {
  std::vector<double> out;
  out.reserve(hist.checkpoints.size());
  for (const auto& c : hist.checkpoints) out.push_back(c.time);
  return out;
}

std::vector<GapPoint> compare_sgd_ctgd(const WeightHistory& hist_sgd,
                                       const WeightHistory& hist_ctgd) {
  if (hist_sgd.checkpoints.empty() || hist_ctgd.checkpoints.empty())
    throw ContractViolation("compare_sgd_ctgd: empty history");
  if (!(hist_sgd.initial() == hist_ctgd.initial()))
    throw ContractViolation("compare_sgd_ctgd: histories start from different weights");
  if (hist_ctgd.process == ProcessKind::CTGD && hist_sgd.process == ProcessKind::SGD &&
      hist_ctgd.total_steps < 10 * hist_sgd.total_steps)
    throw ContractViolation("compare_sgd_ctgd: CTGD grid must have >= 10 ceil(T / epsilon) steps");
  std::vector<GapPoint> out;
  out.reserve(hist_sgd.checkpoints.size());
  for (const auto& c : hist_sgd.checkpoints) {
    const ParamVector other = hist_ctgd.at_time(c.time);
    out.push_back({c.step, c.time, lnorm(c.params - other)});
  }
  return out;
}

}  // namespace mfnet
