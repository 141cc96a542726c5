#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfnet/backprop.hpp"
#include "mfnet/mckean_vlasov.hpp"
#include "mfnet/meanfield.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet {

// Drift fields of a fixed point at every grid node; shared by all flows.
struct MeanFieldFlows {
  TimeGrid grid;
  MbarCoupling coupling = MbarCoupling::Joint;
  std::vector<DriftField> fields;
};

MeanFieldFlows make_flows(const PathEnsemble& fixed_point, const DataDistribution& data,
                          const LRSchedule& sched, const NetworkConfig& cfg,
                          MbarCoupling coupling = MbarCoupling::Joint);

// Ideal particles: every network edge's initial weight flowed under the
// fixed-point drift. Layer L-1 edges ride the column of their own a^(L),
// which is integrated alongside them (column fibers are kept so the layer-L
// mean-field value can be evaluated at any input).
struct IdealWeights {
  TimeGrid grid;
  std::vector<int> nodes;                       // stored grid nodes, ascending
  std::vector<ParamVector> params;              // one per stored node
  std::vector<std::vector<double>> column_fibers;  // per node: N x M_Lm1 x D_{L-1}
  int rows = 0;                                 // M_Lm1

  int slot(int k) const;                        // index into params; throws if not stored
  int node_of_time(double t) const;             // grid node for t; throws off-grid
  const ParamVector& at_node(int k) const { return params[slot(k)]; }
  std::span<const double> column(int k, int iL, int D) const;
};

struct IdealOptions {
  std::vector<int> keep_nodes;  // empty keeps all nodes
  // When given, an unconverged Picard report is rejected.
  const PicardReport* report = nullptr;
};

IdealWeights build_ideal(const ParamVector& params0, const PathEnsemble& fixed_point,
                         const MeanFieldFlows& flows, const NetworkConfig& cfg,
                         const IdealOptions& opts = {});

IdealWeights build_ideal(const ParamVector& params0, const PathEnsemble& fixed_point,
                         const DataDistribution& data, const LRSchedule& sched,
                         const NetworkConfig& cfg, const IdealOptions& opts = {});

// |Delta z^(l)_i| for l in [2, L+1]; entry l holds N_l norms, others empty.
struct DeltaZ {
  std::vector<std::vector<double>> norms;
  double mean(int l) const;
};

DeltaZ delta_z(std::span<const double> x, const IdealWeights& ideal, int k,
               const PathEnsemble& fixed_point, const NetworkConfig& cfg);

// Mean of |Delta z^(l)| over data points and neurons of layer l.
double mean_delta_z(const DataDistribution& data, const IdealWeights& ideal, int k,
                    const PathEnsemble& fixed_point, const NetworkConfig& cfg, int l);

// Analytical drift -alpha E_P[Grad-bar] of every ideal edge at node k.
GradVector ideal_drift(const IdealWeights& ideal, int k, const MeanFieldFlows& flows,
                       const NetworkConfig& cfg);

struct DeltaGrad {
  std::vector<std::vector<double>> norms;  // per layer, N_l x N_{l+1}; empty for layers 0, L
  double mean = 0.0;
  double max = 0.0;
  double fd_mismatch = 0.0;  // max |grid derivative - analytical drift|; NaN if neighbors missing
};

DeltaGrad delta_grad(int k, const IdealWeights& ideal, const MeanFieldFlows& flows,
                     const DataDistribution& data, const LRSchedule& sched,
                     const NetworkConfig& cfg);

// Neuron indices i_1..i_L of a path (i_0 = i_{L+1} = 0).
using PathIndex = std::vector<int>;

// The canonical path (0, ..., 0) followed by `count` uniform random paths.
std::vector<PathIndex> choose_paths(const NetworkConfig& cfg, int count, std::uint64_t seed);

// sum_l |a^(l) - b^(l)| along one path.
double path_error(const ParamVector& a, const ParamVector& b, const PathIndex& path,
                  const NetworkConfig& cfg);

struct CouplingRow {
  long step = 0;
  double time = 0.0;
  double loss_sgd = 0.0;
  double loss_ctgd = 0.0;
  double loss_ideal = 0.0;
  double loss_bar = 0.0;
  double gap = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
  double term3 = 0.0;
  std::vector<double> path_errors;
  double dz_mean = 0.0;   // mean |Delta z^(L+1)| over data
  double dz_max = 0.0;    // max over data and layers [2, L+1]
  double dgrad_mean = 0.0;
  double dgrad_max = 0.0;
};

struct CouplingReport {
  std::vector<PathIndex> paths;
  std::vector<CouplingRow> rows;
};

struct CouplingOptions {
  int paths = 32;
  std::uint64_t seed = 0;
  bool gradient_stats = true;
};

CouplingReport coupling_report(const WeightHistory& hist_sgd, const WeightHistory& hist_ctgd,
                               const IdealWeights& ideal, const PathEnsemble& fixed_point,
                               const MeanFieldFlows& flows, const DataDistribution& data,
                               const LRSchedule& sched, const NetworkConfig& cfg,
                               const CouplingOptions& opts = {});

}  // namespace mfnet
