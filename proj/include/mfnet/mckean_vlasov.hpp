#pragma once

#include <span>
#include <vector>

#include "mfnet/meanfield.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet {

// Everything a single particle needs from the measure at one grid time to
// evaluate its drift -alpha(t) E_P[Grad-bar]. Cotangents are pre-multiplied
// by the data weight w_b; alpha is applied when the drift is taken.
struct DriftField {
  int L = 0;
  int B = 0;
  int M_L = 0;
  double alpha = 0.0;
  std::vector<double> xs;                  // B x d_X
  std::vector<std::vector<double>> zbar;   // zbar[l], l in [2, L-1]: B x d_l
  std::vector<std::vector<double>> g;      // g[l], l in [1, L-2]: B x d_{l+1}, w r^T Mbar^(l+1)
  std::vector<double> gL;                  // B x M_L x d_L, w r^T Mbar^(L)(a_j)
  std::vector<double> hL1;                 // B x d_{L+1}, w r^T Mbar^(L+1)
};

DriftField drift_field(const MeasureSnapshot& snap, const DataDistribution& data,
                       double alpha, const NetworkConfig& cfg,
                       MbarCoupling coupling = MbarCoupling::Joint);

// Drifts add into `out`.
void add_drift_layer1(const DriftField& f, const NetworkConfig& cfg, std::span<const double> a0,
                      std::span<const double> a1, std::span<double> out);
void add_drift_middle(const DriftField& f, const NetworkConfig& cfg, int l,
                      std::span<const double> theta, std::span<double> out);
// Layer L-1 particle in snapshot column j.
void add_drift_fiber(const DriftField& f, const NetworkConfig& cfg, int j,
                     std::span<const double> theta, std::span<double> out);

// A layer L-1 column for an arbitrary a^(L): zbar^(L)(x_b, a^(L)) from the
// column's own fibers, the matching cotangents, and the passenger drift.
std::vector<double> column_z(const DriftField& f, const NetworkConfig& cfg,
                             std::span<const double> fibers, int rows);
std::vector<double> column_cotangent(const DriftField& f, const NetworkConfig& cfg,
                                     std::span<const double> zL, std::span<const double> aL);
void add_drift_column(const DriftField& f, const NetworkConfig& cfg,
                      std::span<const double> cotangent, std::span<const double> theta,
                      std::span<double> out);

// One drift field per grid node 0..K of `ens`.
std::vector<DriftField> drift_fields(const PathEnsemble& ens, const DataDistribution& data,
                                     const LRSchedule& sched, const NetworkConfig& cfg,
                                     MbarCoupling coupling = MbarCoupling::Joint);

// Trajectories of a fresh layer L-1 column with constant a^(L): the shared
// a-tilde fibers of `ens` integrated jointly under `fields`, plus passenger
// particles driven by the same column.
struct ColumnFlow {
  int rows = 0;
  int passengers = 0;
  std::vector<double> fibers;     // (K + 1) x rows x D_{L-1}
  std::vector<double> riders;     // (K + 1) x passengers x D_{L-1}
  std::vector<double> zL;         // (K + 1) x B x d_L

  std::span<const double> rider(int k, int p, int D) const {
    return {riders.data() + (static_cast<std::size_t>(k) * passengers + p) * D,
            static_cast<std::size_t>(D)};
  }
};

ColumnFlow flow_column(const PathEnsemble& ens, const std::vector<DriftField>& fields,
                       std::span<const double> aL, std::span<const double> passenger_init,
                       const NetworkConfig& cfg);

// Euler psi: every particle's ODE integrated with drift from `in`'s
// left-endpoint snapshots. Initial values and constant coordinates are kept.
PathEnsemble psi(const PathEnsemble& in, const DataDistribution& data, const LRSchedule& sched,
                 const NetworkConfig& cfg, MbarCoupling coupling = MbarCoupling::Joint);

// Explicit Euler integration of the coupled particle system, each step's
// drift taken from the ensemble's own current snapshot. This is the exact
// fixed point of the Euler psi and serves as a Picard warm start.
PathEnsemble integrate_coupled(const PathEnsemble& seed, const DataDistribution& data,
                               const LRSchedule& sched, const NetworkConfig& cfg,
                               MbarCoupling coupling = MbarCoupling::Joint);

// Sum over blocks (block01, each middle block, fiber block) of the mean over
// the block's particles of sup_k |Theta_1(t_k) - Theta_2(t_k)|.
double ensemble_distance(const PathEnsemble& e1, const PathEnsemble& e2);

// Exact W1 between equal-size empirical measures on R.
double wasserstein_1d(std::span<const double> a, std::span<const double> b);

struct PicardOptions {
  double tol = 1e-8;
  int max_iter = 50;
  MbarCoupling coupling = MbarCoupling::Joint;
};

struct PicardReport {
  std::vector<double> deltas;
  int iterations = 0;
  bool converged = false;
  double tol = 0.0;
  double wall_seconds = 0.0;
};

struct PicardResult {
  PathEnsemble ensemble;
  PicardReport report;
};

PicardResult picard_solve(const PathEnsemble& seed, const DataDistribution& data,
                          const LRSchedule& sched, const NetworkConfig& cfg,
                          const PicardOptions& opts = {});

// Drift bound 2 alpha_max C^(L+3) and the Lipschitz rate (1 + C) times it.
double drift_bound(const NetworkConfig& cfg, const LRSchedule& sched);
double r_theory(const NetworkConfig& cfg, const LRSchedule& sched);

struct SpecialOptions {
  int probes = 0;       // 0 means D_{L-1} + D_L (one per coordinate)
  double delta = 1e-4;
  MbarCoupling coupling = MbarCoupling::Joint;
};

struct SpecialDiagnostics {
  double R_hat = 0.0;
  double C_drift = 0.0;
  double R_theory = 0.0;
  std::vector<double> times;
  std::vector<double> s;    // sensitivity per grid node
  bool lipschitz_ok = false;  // R_hat <= C_drift
};

SpecialDiagnostics special_diagnostics(const PathEnsemble& fixed_point,
                                       const DataDistribution& data, const LRSchedule& sched,
                                       const NetworkConfig& cfg, const SpecialOptions& opts = {});

// max over trajectories and grid steps of |Theta(t_{k+1}) - Theta(t_k)| / dt
double max_increment_rate(const PathEnsemble& ens);

}  // namespace mfnet
