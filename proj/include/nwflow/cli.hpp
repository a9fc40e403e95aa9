#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nwflow/causal.hpp"
#include "nwflow/config.hpp"
#include "nwflow/metrics.hpp"
#include "nwflow/training.hpp"

namespace nwflow {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

struct CliConfig {
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "run";  // train
  std::string out;              // single-file outputs
  std::optional<std::uint64_t> seed;
  int threads = 1;

  std::string ckpt;
  std::string data;
  std::string name = "8gaussians";
  long long n = 1000;
  double t = 1.0;  // normalized flow time in [0, 1]
  std::vector<double> bounds{-4.0, 4.0, -4.0, 4.0};
  int resolution = 100;
  std::string trajectory;  // optional trajectory dump path for `sample`
};

const std::vector<KeyInfo>& train_schema();
const std::vector<KeyInfo>& causal_schema();
const std::vector<KeyInfo>& eval_schema();
const std::vector<KeyInfo>& integrator_schema();

/// Reads the optional config file, applies overrides and resolves against a schema.
Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                   const std::vector<KeyInfo>& schema);

struct TrainSetup {
  TrainConfig train;
  Index n_train = 0;
  Index n_holdout = 0;
  Index eval_samples = 0;
  Index eval_w2_points = 0;
};

TrainSetup train_setup_from(const Config& cfg);
CausalConfig causal_config_from(const Config& cfg);
IntegratorConfig integrator_from(const Config& cfg);

/// Log-density on a resolution x resolution grid of cell centers for the flow
/// stopped at normalized time t. Rows: x, y, logp, with x varying fastest.
Eigen::MatrixXd density_grid(const VelocityField& field, double t1, const std::vector<double>& bounds, int resolution,
                             double t, const IntegratorConfig& cfg, int threads = 1);

/// Fast invariant checks; prints one line per check.
bool run_self_checks(std::ostream& out);

int run(const CliConfig& cli, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to run().
int cli_main(int argc, char** argv);

}  // namespace nwflow
