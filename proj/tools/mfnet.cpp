#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mfnet/error.hpp"
#include "mfnet/harness/config.hpp"
#include "mfnet/harness/experiments.hpp"
#include "mfnet/parallel.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field limits of deep networks: SGD, mean-field flow and coupling experiments"};
  app.set_version_flag("--version", MFNET_VERSION);
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  int threads = 1;
  long long seed_override = -1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("--seed-override", seed_override, "replace the configured master seed")
        ->check(CLI::NonNegativeNumber);
  };
  auto* train = app.add_subcommand("train", "SGD run (optionally with its gradient flow)");
  auto* meanfield = app.add_subcommand("meanfield", "Picard fixed point of the mean-field flow");
  auto* couple = app.add_subcommand("couple", "SGD, gradient flow and ideal particles on one draw");
  auto* sweep = app.add_subcommand("sweep", "metric sweep over widths, step sizes and seeds");
  for (auto* sub : {train, meanfield, couple, sweep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  using namespace mfnet;
  harness::ExperimentConfig cfg;
  try {
    cfg = harness::load_config(config_path);
    if (seed_override >= 0) cfg = cfg.with_seed(static_cast<std::uint64_t>(seed_override));
    if (!out_dir.empty()) {
      cfg.out_dir = out_dir;
    }
    set_thread_count(threads);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }

  try {
    if (train->parsed())
      harness::run_train(cfg, std::cerr);
    else if (meanfield->parsed())
      harness::run_meanfield(cfg, std::cerr);
    else if (couple->parsed())
      harness::run_couple(cfg, std::cerr);
    else
      harness::run_sweep(cfg, std::cerr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
