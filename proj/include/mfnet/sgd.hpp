#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfnet/network.hpp"

namespace mfnet {

// Law of one layer's initial weights: every coordinate independent.
struct InitLayer {
  std::string family = "gaussian";  // "gaussian" (mean, sd = scale) or "uniform" (mean +- scale)
  double mean = 0.0;
  double scale = 1.0;
};

// Initial law mu_0 = prod_l mu_0^(l). A single entry in `layers` is
// broadcast to every layer.
struct InitSpec {
  std::vector<InitLayer> layers{InitLayer{}};
  std::uint64_t seed = 0;

  const InitLayer& layer(int l) const;
  void validate(const NetworkConfig& cfg) const;
  // Fills `out` with one draw from mu_0^(l).
  void draw(int l, std::mt19937_64& rng, std::span<double> out) const;
};

// Learning-rate profile alpha(t).
class LRSchedule {
 public:
  enum class Kind { Constant, ExpDecay, Inverse };

  static LRSchedule constant(double value);
  // value * exp(-t / tau)
  static LRSchedule exp_decay(double value, double tau);
  // value / (1 + t / tau)
  static LRSchedule inverse(double value, double tau);

  double operator()(double t) const;
  // sup_t alpha(t); every supported profile peaks at t = 0.
  double bound() const { return value_; }
  Kind kind() const { return kind_; }
  double value() const { return value_; }
  double tau() const { return tau_; }
  // Throws ContractViolation unless alpha(t) in [0, C].
  void check_against(const NetworkConfig& cfg) const;

 private:
  LRSchedule(Kind k, double v, double tau) : kind_(k), value_(v), tau_(tau) {}
  Kind kind_ = Kind::Constant;
  double value_ = 1.0;
  double tau_ = 1.0;
};

enum class Integrator { Euler, RK4 };

struct RunSpec {
  double T = 0.5;
  double epsilon = 0.01;
  long K = 0;                // CTGD grid steps; 0 means 10 * sgd_steps()
  std::uint64_t seed = 0;
  Integrator integrator = Integrator::Euler;
  long checkpoint_every = 0; // 0 means ceil(steps / 100)

  long sgd_steps() const;    // ceil(T / epsilon)
  long ctgd_steps() const;
  void validate() const;
};

enum class ProcessKind { SGD, CTGD };

struct Checkpoint {
  long step = 0;
  double time = 0.0;
  ParamVector params;
};

// Stored states of one SGD or CTGD run. Checkpoints are sorted by step and
// always include step 0 and the final step.
struct WeightHistory {
  ProcessKind process = ProcessKind::SGD;
  RunSpec spec;
  long total_steps = 0;
  double dt = 0.0;           // epsilon for SGD, T / K for CTGD
  std::vector<Checkpoint> checkpoints;

  const ParamVector& initial() const { return checkpoints.front().params; }
  const ParamVector& terminal() const { return checkpoints.back().params; }
  // State at time t: a stored node, or linear interpolation between two
  // stored nodes that are adjacent grid steps. Throws otherwise.
  ParamVector at_time(double t) const;
};

ParamVector init_params(const NetworkConfig& cfg, const InitSpec& init);

WeightHistory sgd_run(const ParamVector& params0, const DataDistribution& data,
                      const RunSpec& spec, const LRSchedule& sched, const NetworkConfig& cfg);

// Gradient flow d theta / dt = -alpha(t) N^2 grad L_N on a uniform grid of
// spec.ctgd_steps() steps. Grid nodes bracketing every time in
// `required_times` are stored in addition to the regular cadence.
WeightHistory ctgd_run(const ParamVector& params0, const DataDistribution& data,
                       const RunSpec& spec, const LRSchedule& sched, const NetworkConfig& cfg,
                       std::span<const double> required_times = {});

// Times k * epsilon of every SGD checkpoint, for ctgd_run's required_times.
std::vector<double> checkpoint_times(const WeightHistory& hist);

struct GapPoint {
  long step = 0;
  double time = 0.0;
  double gap = 0.0;
};

// ||theta(k) - theta_tilde(k epsilon)||_(L) at every checkpoint of `hist_sgd`.
std::vector<GapPoint> compare_sgd_ctgd(const WeightHistory& hist_sgd,
                                       const WeightHistory& hist_ctgd);

}  // namespace mfnet
