#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/datasets.hpp"
#include "nwflow/field.hpp"
#include "nwflow/integrator.hpp"
#include "nwflow/training.hpp"

namespace nwflow {

/// The flow is trained in coordinates centered at the prior mean, so the
/// standard-normal base of the integrator is the prior N(mu0, 1). Estimates
/// are shifted back by mu0.
///
/// t in [0, 1] is normalized flow time; t * t1 must fall on the integrator's
/// step grid.
double plugin_psi_at_t(const VelocityField& field, const PriorSampler& prior, double t, double t1, Index samples,
                       std::uint64_t seed, const IntegratorConfig& cfg);

/// plugin_psi_at_t over a grid, sharing one set of prior draws and one
/// trajectory.
Eigen::VectorXd plugin_curve(const VelocityField& field, const PriorSampler& prior, const std::vector<double>& t_grid,
                             double t1, Index samples, std::uint64_t seed, const IntegratorConfig& cfg,
                             int threads = 1);

/// One-step fluctuation of an initial estimate along the mean's influence
/// function X - psi; for the mean it lands on the sample average.
double tmle_baseline(const Eigen::Ref<const Eigen::VectorXd>& observed);

struct CausalConfig {
  CausalScenario scenario;
  std::vector<double> t_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int replications = 200;
  std::uint64_t seed = 0;
  Index plugin_samples = 10000;
  TrainConfig train;  // batch_size 0 means the full observed sample

  CausalConfig();
  void validate() const;
};

struct RmseRow {
  std::string label;  // the t value, or "tmle"
  double bias = 0.0;
  double variance = 0.0;
  double rmse = 0.0;
  double se = 0.0;  // Monte-Carlo standard error of rmse
};

struct RmseTable {
  std::vector<double> t_grid;
  std::vector<RmseRow> rows;  // one per t
  RmseRow tmle;
  int replications = 0;       // successful ones
  int failures = 0;
  Eigen::MatrixXd estimates;  // successful replications x t
  Eigen::VectorXd tmle_estimates;
};

/// bias, population variance, rmse and its standard error of `estimates` around `truth`.
RmseRow summarize_estimates(const Eigen::Ref<const Eigen::VectorXd>& estimates, double truth, std::string label);

using ReplicationCallback = std::function<void(int replication, bool ok)>;

RmseTable rmse_experiment(const CausalConfig& cfg, int threads = 1, const ReplicationCallback& progress = {});

std::string format_rmse_csv(const RmseTable& table);

}  // namespace nwflow
