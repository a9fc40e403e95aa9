#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/field.hpp"
#include "nwflow/functionals.hpp"
#include "nwflow/integrator.hpp"

namespace nwflow {

struct TrainConfig {
  std::string dataset = "8gaussians";
  MlpSpec spec;
  double lambda = 0.0;
  FunctionalKind functional = FunctionalKind::second_moment_half;
  std::vector<Monomial> phi;  // expectation functional only
  int batch_size = 256;
  int prior_batch = 256;  // Monte-Carlo particles for the regularizer per step
  int epochs = 500;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool learnable_t1 = false;
  double t1 = 1.0;  // fixed value, or the initial value when learnable
  int mu_samples = 1024;
  IntegratorConfig integrator;
  int threads = 1;

  void validate() const;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  static AdamState zeros(Index n);
};

struct AdamResult {
  Eigen::VectorXd theta;
  AdamState state;
};

AdamResult adam_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& grads, const AdamState& state, double lr,
                     double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

double softplus(double x);
double inverse_softplus(double y);

/// Mean negative log-likelihood of the rows of `batch` with t0 = 0.
double nll_loss(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch, double t1,
                const IntegratorConfig& cfg, int threads = 1);

struct LossValue {
  double total = 0.0;
  double nll = 0.0;
  double reg = 0.0;
};

/// nll over `batch` plus lambda times the mean regularizer accumulated along
/// forward trajectories of `prior_batch`. Without a functional reg is 0.
LossValue regularized_loss(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                           const Eigen::Ref<const Eigen::MatrixXd>& prior_batch, double t1, double lambda,
                           const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                           int threads = 1);

struct LossGradient {
  LossValue value;
  Eigen::VectorXd dtheta;  // in parameter_blocks order, which is the flat theta layout for MLPs
  double dt1 = 0.0;
};

/// regularized_loss with its exact gradient through the unrolled integrator.
LossGradient regularized_loss_grad(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                                   const Eigen::Ref<const Eigen::MatrixXd>& prior_batch, double t1, double lambda,
                                   const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                                   int threads = 1);

/// Draws n prior samples and transports them to t1.
Eigen::MatrixXd sample_model(const VelocityField& field, Index n, std::uint64_t seed, double t1,
                             const IntegratorConfig& cfg, int threads = 1);

struct EpochRecord {
  int epoch = 0;
  double nll = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double t1 = 0.0;
  double seconds = 0.0;
};

struct RunArtifacts {
  FieldParams initial;
  FieldParams params;
  double t1 = 1.0;
  std::vector<EpochRecord> log;
  bool aborted = false;
  std::string abort_reason;
};

using EpochCallback = std::function<void(const EpochRecord&, const FieldParams&, double t1)>;

RunArtifacts train(const TrainConfig& config, const Eigen::Ref<const Eigen::MatrixXd>& data,
                   const EpochCallback& on_epoch = {});

}  // namespace nwflow
