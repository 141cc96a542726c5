#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mfnet/harness/config.hpp"
#include "mfnet/ideal.hpp"

namespace mfnet::harness {

struct FixedPoint {
  PathEnsemble ensemble;
  PicardReport report;
};

// Samples the ensemble from the config seed and runs Picard iteration,
// optionally from the coupled Euler trajectory.
FixedPoint solve_fixed_point(const ExperimentConfig& c, std::ostream& log);

// Master seed of sweep replicate s.
std::uint64_t sweep_seed(std::uint64_t master, int s);

// One sweep measurement. `fp` and `flows` are required by loss_gap and
// delta_z and ignored by sgd_ctgd.
double sweep_metric(const ExperimentConfig& c, int N, double epsilon, int s,
                    const PathEnsemble* fp, const MeanFieldFlows* flows);

io::json manifest(const ExperimentConfig& c, const std::string& subcommand,
                  const std::vector<std::string>& files);

void run_train(const ExperimentConfig& c, std::ostream& log);
void run_meanfield(const ExperimentConfig& c, std::ostream& log);
void run_couple(const ExperimentConfig& c, std::ostream& log);
void run_sweep(const ExperimentConfig& c, std::ostream& log);

}  // namespace mfnet::harness
