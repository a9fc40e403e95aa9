#include "nwflow/datasets.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nwflow/rng.hpp"
#include "nwflow/tensor.hpp"

namespace nwflow {

namespace {

void check_count(Eigen::Index n) {
  if (n < 0) throw ContractError("sample count must be non-negative");
}

}  // namespace

Eigen::MatrixXd sample_8gaussians(Eigen::Index n, std::uint64_t seed) {
  check_count(n);
  Rng rng(seed);
  Eigen::MatrixXd out(n, 2);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double angle = static_cast<double>(rng.index(8)) * std::numbers::pi / 4.0;
    const double x = 4.0 * std::cos(angle) + 0.5 * rng.normal();
    const double y = 4.0 * std::sin(angle) + 0.5 * rng.normal();
    out(i, 0) = x * inv_sqrt2;
    out(i, 1) = y * inv_sqrt2;
  }
  return out;
}

Eigen::MatrixXd sample_pinwheel(Eigen::Index n, std::uint64_t seed) {
  check_count(n);
  Rng rng(seed);
  Eigen::MatrixXd out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double k = static_cast<double>(rng.index(5));
    const double r = 0.3 * rng.normal() + 1.0;
    const double s = 0.05 * rng.normal();
    const double angle = 2.0 * std::numbers::pi * k / 5.0 + 0.25 * r;
    const double c = std::cos(angle), sn = std::sin(angle);
    out(i, 0) = c * r - sn * s;
    out(i, 1) = sn * r + c * s;
  }
  return out;
}

Eigen::MatrixXd sample_gaussian1d(Eigen::Index n, std::uint64_t seed, double mean, double sd) {
  check_count(n);
  if (!(sd > 0.0)) throw ContractError("standard deviation must be positive");
  Rng rng(seed);
  Eigen::MatrixXd out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) out(i, 0) = mean + sd * rng.normal();
  return out;
}

Eigen::MatrixXd sample_dataset(std::string_view name, Eigen::Index n, std::uint64_t seed) {
  if (name == "8gaussians" || name == "eightgaussians") return sample_8gaussians(n, seed);
  if (name == "pinwheel") return sample_pinwheel(n, seed);
  if (name == "gaussian1d") return sample_gaussian1d(n, seed);
  throw ContractError("unknown dataset '" + std::string(name) + "' (expected 8gaussians, pinwheel or gaussian1d)");
}

Eigen::Index dataset_dim(std::string_view name) {
  if (name == "gaussian1d") return 1;
  if (name == "8gaussians" || name == "eightgaussians" || name == "pinwheel") return 2;
  throw ContractError("unknown dataset '" + std::string(name) + "' (expected 8gaussians, pinwheel or gaussian1d)");
}

void CausalScenario::validate() const {
  if (!(noise_sd > 0.0)) throw ContractError("scenario noise_sd must be positive");
  if (n_obs < 1) throw ContractError("scenario needs at least one observation");
  if (!std::isfinite(true_mean) || !std::isfinite(bias) || !std::isfinite(prior_mean)) {
    throw ContractError("scenario parameters must be finite");
  }
}

Eigen::MatrixXd PriorSampler::draw(Eigen::Index n, std::uint64_t seed) const {
  Rng rng(seed);
  Eigen::MatrixXd out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) out(i, 0) = mean_ + rng.normal();
  return out;
}

ScenarioDraw sample_scenario(const CausalScenario& sc, std::uint64_t replication_seed) {
  sc.validate();
  return {sample_gaussian1d(sc.n_obs, replication_seed, sc.true_mean + sc.bias, sc.noise_sd), PriorSampler(sc.prior_mean)};
}

}  // namespace nwflow
