#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfnet/io.hpp"
#include "mfnet/meanfield.hpp"
#include "mfnet/mckean_vlasov.hpp"
#include "mfnet/network.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet::harness {

struct EnsembleSpec {
  EnsembleCounts counts;
  int K = 50;
  double tol = 1e-8;
  int max_iter = 50;
  bool warm_start = false;
  MbarCoupling coupling = MbarCoupling::Joint;
};

struct SweepSpec {
  std::string metric = "loss_gap";  // loss_gap | sgd_ctgd | delta_z
  std::vector<int> N{32};
  std::vector<double> epsilon{0.01};
  int seeds = 10;
  int bootstrap = 1000;
};

struct ExperimentConfig {
  NetworkConfig net;
  InitSpec init;
  RunSpec run;
  LRSchedule sched = LRSchedule::constant(1.0);
  int data_points = 16;
  EnsembleSpec ensemble;
  std::uint64_t seed = 0;
  bool train_ctgd = false;
  std::string fixed_point;  // couple: existing ensemble base path; empty computes one
  int paths = 32;
  SweepSpec sweep;
  std::filesystem::path out_dir = "out";
  bool record_wall_time = false;
  io::json source;  // normalized config (after overrides), hashed into manifests

  DataDistribution data() const { return DataDistribution::sine(data_points); }
  TimeGrid grid() const { return {run.T, ensemble.K}; }
  PicardOptions picard() const { return {ensemble.tol, ensemble.max_iter, ensemble.coupling}; }
  // Copy with the master seed replaced and every derived seed refreshed.
  ExperimentConfig with_seed(std::uint64_t s) const;
};

// The default desk-scale configuration as JSON.
io::json default_config_json();

// Missing fields take their defaults from default_config_json(). Throws
// ConfigError naming the offending field path.
ExperimentConfig parse_config(const io::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mfnet::harness
