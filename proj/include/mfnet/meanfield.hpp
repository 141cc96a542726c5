#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfnet/network.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet {

struct EnsembleCounts {
  int M = 64;      // block01 pairs and every middle block
  int M_L = 64;    // constant a^(L) particles (fiber columns)
  int M_Lm1 = 64;  // shared a-tilde^(L-1) sample (fiber rows)
  bool operator==(const EnsembleCounts&) const = default;
};

// Uniform grid of K + 1 nodes on [0, T].
struct TimeGrid {
  double T = 0.5;
  int K = 50;
  double dt() const { return T / K; }
  double time(int k) const { return k == K ? T : T * k / K; }
  bool operator==(const TimeGrid&) const = default;
};

// How the layer L-1 averaged adjoint combines the (L-1, L) blocks.
enum class MbarCoupling {
  Joint,       // mean over fibers (i, j) of Mbar^(L)(a_j) D_z sigma(zbar, F_ij)
  Factorized,  // mean_j Mbar^(L)(a_j) times mean_{i,j} D_z sigma(zbar, F_ij)
};

// Time-t slice of a path ensemble: the measure mu_t fed to mean-field maps.
struct MeasureSnapshot {
  int L = 0;
  std::vector<int> D;                  // D[l], l in [0, L]
  EnsembleCounts counts;
  std::vector<double> a0;              // M x D0
  std::vector<double> a1;              // M x D1
  std::vector<std::vector<double>> middle;  // middle[l - 2]: M x D_l, l in [2, L-2]
  std::vector<double> aL;              // M_L x D_L
  std::vector<double> fibers;          // [j][i]: M_L x M_Lm1 x D_{L-1}

  std::span<const double> pair0(int p) const { return row(a0, p, D[0]); }
  std::span<const double> pair1(int p) const { return row(a1, p, D[1]); }
  std::span<const double> mid(int l, int p) const { return row(middle[l - 2], p, D[l]); }
  std::span<const double> last(int j) const { return row(aL, j, D[L]); }
  std::span<const double> fiber(int i, int j) const {
    return row(fibers, j * counts.M_Lm1 + i, D[L - 1]);
  }

 private:
  static std::span<const double> row(const std::vector<double>& v, int p, int dim) {
    return {v.data() + static_cast<std::size_t>(p) * dim, static_cast<std::size_t>(dim)};
  }
};

// Particle representation of a path measure with the factorized block
// structure: (a0, a1) pairs, independent middle blocks, and the (L-1, L)
// block stored as constant a^(L)_j plus fiber trajectories F(a-tilde_i, a_j).
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(const NetworkConfig& cfg, const EnsembleCounts& counts, const TimeGrid& grid);

  int L() const { return L_; }
  const std::vector<int>& D() const { return D_; }
  const EnsembleCounts& counts() const { return counts_; }
  const TimeGrid& grid() const { return grid_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  // Constant coordinates.
  std::span<double> a0(int p) { return row(a0_, p, D_[0]); }
  std::span<const double> a0(int p) const { return row(a0_, p, D_[0]); }
  std::span<double> aL(int j) { return row(aL_, j, D_[L_]); }
  std::span<const double> aL(int j) const { return row(aL_, j, D_[L_]); }
  std::span<double> fiber_init(int i) { return row(fiber_init_, i, D_[L_ - 1]); }
  std::span<const double> fiber_init(int i) const { return row(fiber_init_, i, D_[L_ - 1]); }

  // Trajectory values at grid node k.
  std::span<double> layer1(int k, int p) { return row(layer1_, k * counts_.M + p, D_[1]); }
  std::span<const double> layer1(int k, int p) const {
    return row(layer1_, k * counts_.M + p, D_[1]);
  }
  std::span<double> mid(int l, int k, int p) {
    return row(middle_[l - 2], k * counts_.M + p, D_[l]);
  }
  std::span<const double> mid(int l, int k, int p) const {
    return row(middle_[l - 2], k * counts_.M + p, D_[l]);
  }
  std::span<double> fiber(int k, int i, int j) {
    return row(fibers_, fiber_index(k, i, j), D_[L_ - 1]);
  }
  std::span<const double> fiber(int k, int i, int j) const {
    return row(fibers_, fiber_index(k, i, j), D_[L_ - 1]);
  }

  int middle_count() const { return static_cast<int>(middle_.size()); }

  // Copies every trajectory's node-0 value to all later nodes.
  void make_constant();

  MeasureSnapshot snapshot(int k) const;
  // Linear interpolation between the bracketing grid nodes.
  MeasureSnapshot snapshot_at(double t) const;

  bool same_structure(const PathEnsemble& other) const;
  bool same_initial(const PathEnsemble& other) const;
  bool all_finite() const;

  bool operator==(const PathEnsemble& other) const = default;

  // Raw storage, for serialization.
  std::vector<double>& raw_a0() { return a0_; }
  std::vector<double>& raw_layer1() { return layer1_; }
  std::vector<std::vector<double>>& raw_middle() { return middle_; }
  std::vector<double>& raw_aL() { return aL_; }
  std::vector<double>& raw_fiber_init() { return fiber_init_; }
  std::vector<double>& raw_fibers() { return fibers_; }
  const std::vector<double>& raw_a0() const { return a0_; }
  const std::vector<double>& raw_layer1() const { return layer1_; }
  const std::vector<std::vector<double>>& raw_middle() const { return middle_; }
  const std::vector<double>& raw_aL() const { return aL_; }
  const std::vector<double>& raw_fiber_init() const { return fiber_init_; }
  const std::vector<double>& raw_fibers() const { return fibers_; }

 private:
  static std::span<double> row(std::vector<double>& v, int p, int dim) {
    return {v.data() + static_cast<std::size_t>(p) * dim, static_cast<std::size_t>(dim)};
  }
  static std::span<const double> row(const std::vector<double>& v, int p, int dim) {
    return {v.data() + static_cast<std::size_t>(p) * dim, static_cast<std::size_t>(dim)};
  }
  int fiber_index(int k, int i, int j) const {
    return (k * counts_.M_L + j) * counts_.M_Lm1 + i;
  }

  int L_ = 0;
  std::vector<int> D_;
  EnsembleCounts counts_;
  TimeGrid grid_;
  std::uint64_t seed_ = 0;
  std::vector<double> a0_;
  std::vector<double> layer1_;
  std::vector<std::vector<double>> middle_;
  std::vector<double> aL_;
  std::vector<double> fiber_init_;
  std::vector<double> fibers_;
};

// Mean-field quantities at one input x. Indices follow the network layers:
// zbar[l] and Mbar[l] are filled for l in [2, L-1]; layer L is per column.
struct MeanFieldTrace {
  int d_y = 0;
  std::vector<double> x;
  std::vector<double> u;                   // sigma^(0)(x, a0_p): M x d1
  std::vector<std::vector<double>> zbar;   // zbar[l]: d_l
  std::vector<double> zL;                  // zbar^(L)(x, a_j): M_L x d_L
  std::vector<double> zL1;                 // d_{L+1}
  std::vector<double> ybar;                // d_Y
  std::vector<std::vector<double>> Mbar;   // Mbar[l]: d_Y x d_l
  std::vector<double> MbarL;               // M_L blocks of d_Y x d_L
  std::vector<double> MbarL1;              // d_Y x d_{L+1}
  bool has_mbar = false;

  std::span<const double> zL_col(int j, int dL) const {
    return {zL.data() + static_cast<std::size_t>(j) * dL, static_cast<std::size_t>(dL)};
  }
  std::span<const double> MbarL_col(int j, int dL) const {
    const std::size_t n = static_cast<std::size_t>(d_y) * dL;
    return {MbarL.data() + j * n, n};
  }
};

// One weight per layer, theta^(0) ... theta^(L).
using PathWeights = std::vector<std::vector<double>>;

EnsembleCounts validated(const EnsembleCounts& counts);

// Initial values from mu_0 with constant trajectories (the Picard seed).
// Uses the "ensemble" RNG stream of init.seed.
PathEnsemble sample_ensemble(const NetworkConfig& cfg, const InitSpec& init,
                             const TimeGrid& grid, const EnsembleCounts& counts);

MeanFieldTrace zbar_forward(std::span<const double> x, const MeasureSnapshot& snap,
                            const NetworkConfig& cfg);

// Fills the M-part of `trace` (z-part must be present).
void mbar(MeanFieldTrace& trace, const MeasureSnapshot& snap, const NetworkConfig& cfg,
          MbarCoupling coupling = MbarCoupling::Joint);

MeanFieldTrace mean_field_trace(std::span<const double> x, const MeasureSnapshot& snap,
                                const NetworkConfig& cfg,
                                MbarCoupling coupling = MbarCoupling::Joint);

// Gamma-bar^(l) for l in [1, L-1] as d_Y x D_l blocks (entries 0 and L are
// empty). `column` is the snapshot column j whose a^(L)_j equals path[L];
// the layer L-1 block needs it and a negative column throws ContractViolation.
std::vector<std::vector<double>> gammabar(const PathWeights& path, int column,
                                          const MeanFieldTrace& trace,
                                          const MeasureSnapshot& snap, const NetworkConfig& cfg);

// (ybar - y)^T Gamma-bar^(l) per layer as D_l-vectors; zero on layers 0 and L.
std::vector<std::vector<double>> gradbar(std::span<const double> x, std::span<const double> y,
                                         const MeasureSnapshot& snap, const PathWeights& path,
                                         int column, const NetworkConfig& cfg,
                                         MbarCoupling coupling = MbarCoupling::Joint);

// (1/2) sum_b w_b |y_b - ybar(x_b)|^2
double loss_bar(const MeasureSnapshot& snap, const DataDistribution& data,
                const NetworkConfig& cfg);

// Per-point ybar values, B x d_Y.
std::vector<double> ybar_values(const MeasureSnapshot& snap, const DataDistribution& data,
                                const NetworkConfig& cfg);

}  // namespace mfnet
