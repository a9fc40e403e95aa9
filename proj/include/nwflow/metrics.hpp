#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/field.hpp"
#include "nwflow/functionals.hpp"
#include "nwflow/integrator.hpp"

namespace nwflow {

/// Row i of `cost` assigned to column result[i], minimizing the total cost.
std::vector<Index> hungarian_assignment(const Eigen::Ref<const Eigen::MatrixXd>& cost);

Eigen::MatrixXd squared_distance_matrix(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                        const Eigen::Ref<const Eigen::MatrixXd>& b);

/// sqrt((1/n) min_pi sum_i |a_i - b_pi(i)|^2) for equal-size point sets (rows).
double empirical_w2(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b);

/// Same quantity by enumerating all n! permutations; n <= 8.
double brute_force_w2(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b);

struct CrlbReport {
  double bound = 0.0;
  double eif_second_moment = 0.0;
  double gap = 0.0;
  bool holds = false;
};

/// Cauchy-Schwarz bound <phi, g>^2 / <g, g> against E phi^2, with g centered.
CrlbReport crlb_check(const Eigen::Ref<const Eigen::VectorXd>& phi, const Eigen::Ref<const Eigen::VectorXd>& g);

struct EvalConfig {
  double t1 = 1.0;
  IntegratorConfig integrator;
  FunctionalDescriptor functional;  // residual diagnostics
  std::uint64_t seed = 0;
  Index samples = 2048;             // for moments
  Index w2_points = 512;
  int residual_times = 11;          // evenly spaced in [0, t1]
  int threads = 1;
};

struct EvalReport {
  double nll = 0.0;
  Eigen::VectorXd sample_mean;
  Eigen::VectorXd sample_var;
  double residual_velocity = 0.0;
  double residual_logdensity = 0.0;
  double w2 = 0.0;
};

/// Held-out NLL, moments of model samples, mean residuals along sampled
/// trajectories and W2 between model samples and held-out points.
EvalReport eval_suite(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& holdout,
                      const EvalConfig& cfg);

}  // namespace nwflow
