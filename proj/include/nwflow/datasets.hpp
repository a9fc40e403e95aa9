#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace nwflow {

/// Eight isotropic Gaussians (sd 0.5) on a circle of radius 4, scaled by 1/sqrt(2).
Eigen::MatrixXd sample_8gaussians(Eigen::Index n, std::uint64_t seed);

/// Five curved blades.
Eigen::MatrixXd sample_pinwheel(Eigen::Index n, std::uint64_t seed);

Eigen::MatrixXd sample_gaussian1d(Eigen::Index n, std::uint64_t seed, double mean = 2.0, double sd = 1.0);

/// Dispatches on "8gaussians" (or "eightgaussians"), "pinwheel", "gaussian1d".
Eigen::MatrixXd sample_dataset(std::string_view name, Eigen::Index n, std::uint64_t seed);
Eigen::Index dataset_dim(std::string_view name);

/// Observed data N(true_mean + bias, noise_sd^2), prior N(prior_mean, 1).
struct CausalScenario {
  double true_mean = 0.0;
  double bias = 1.0;
  double noise_sd = 1.0;
  int n_obs = 50;
  double prior_mean = 0.0;

  void validate() const;
};

class PriorSampler {
 public:
  explicit PriorSampler(double mean) : mean_(mean) {}
  double mean() const { return mean_; }
  /// n x 1 draws from N(mean, 1).
  Eigen::MatrixXd draw(Eigen::Index n, std::uint64_t seed) const;

 private:
  double mean_;
};

struct ScenarioDraw {
  Eigen::MatrixXd observed;  // n_obs x 1
  PriorSampler prior;
};

ScenarioDraw sample_scenario(const CausalScenario& sc, std::uint64_t replication_seed);

}  // namespace nwflow
