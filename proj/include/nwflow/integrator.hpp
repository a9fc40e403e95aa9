#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/field.hpp"
#include "nwflow/functionals.hpp"
#include "nwflow/graph.hpp"

namespace nwflow {

enum class Method { euler, rk4 };

struct DivergenceMode {
  enum class Kind { exact, hutchinson };
  Kind kind = Kind::exact;
  int probes = 1;
  std::uint64_t seed = 0;
};

struct IntegratorConfig {
  Method method = Method::rk4;
  int steps = 100;
  DivergenceMode divergence;

  void validate() const;
};

/// One particle: position, accumulated log-density, accumulated regularizer
/// (squared velocity times time) and the current time.
struct FlowState {
  Eigen::VectorXd z;
  double logp = 0.0;
  double reg = 0.0;
  double t = 0.0;
};

/// Rows are particles.
struct FlowBatch {
  Eigen::MatrixXd z;
  Eigen::VectorXd logp;
  Eigen::VectorXd reg;
  double t = 0.0;
};

/// Per-step snapshots of a batch integration, the initial state included.
struct Trajectory {
  std::vector<double> t;
  std::vector<Eigen::MatrixXd> z;
  std::vector<Eigen::VectorXd> logp;
};

struct BatchOptions {
  int threads = 1;
  /// Global index of the first row, so Hutchinson probes do not depend on how
  /// a batch is split.
  std::uint64_t first_particle = 0;
  Trajectory* trajectory = nullptr;
};

FlowState integrate_forward(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z0, double logp0,
                            double t0, double t1, const std::optional<FunctionalDescriptor>& functional,
                            const IntegratorConfig& cfg);

FlowBatch integrate_forward_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z0,
                                  const Eigen::Ref<const Eigen::VectorXd>& logp0, double t0, double t1,
                                  const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                                  const BatchOptions& opts = {});

/// Transports z0 from t0 to t1 without the log-density or regularizer
/// channels. A requested trajectory gets t and z only.
Eigen::MatrixXd push_forward_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z0, double t0,
                                   double t1, const IntegratorConfig& cfg, const BatchOptions& opts = {});

/// Integrates dz/dt = f backward from t1 to t0.
Eigen::VectorXd integrate_inverse(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z1, double t1,
                                  double t0, const IntegratorConfig& cfg);
Eigen::MatrixXd integrate_inverse_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z1,
                                        double t1, double t0, const IntegratorConfig& cfg, const BatchOptions& opts = {});

/// log density of x under the flow that carries N(0, I) at t0 to the model at
/// t1: the pullback log N(z0; 0, I) minus the integrated divergence.
double log_likelihood(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& x, double t0, double t1,
                      const IntegratorConfig& cfg);
Eigen::VectorXd log_likelihood_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& x, double t0,
                                     double t1, const IntegratorConfig& cfg, const BatchOptions& opts = {});

double standard_normal_logpdf(const Eigen::Ref<const Eigen::VectorXd>& z);

/// Rows per independently integrated chunk. Fixed so results do not depend on
/// the thread count.
inline constexpr Index kChunkRows = 256;

/// The augmented system for one integration step, compiled once per chunk and
/// re-bound at every step.
///
/// Outputs per row: the new state, the step's share of the divergence integral
/// (signed by the step direction) and of the regularizer integral. Backward
/// evaluation recomputes the step from the stored input state, which keeps
/// memory at one step while giving the exact gradient of the unrolled scheme.
class StepProgram {
 public:
  struct Spec {
    Method method = Method::rk4;
    int steps = 1;
    bool divergence = false;
    DivergenceMode divergence_mode;
    std::optional<FunctionalDescriptor> functional;
  };

  struct Output {
    RowMatrix z;
    Eigen::VectorXd div;
    Eigen::VectorXd reg;
  };

  struct Adjoint {
    RowMatrix dz;
    std::vector<Tensor> dparams;
    double dt_start = 0.0;
    double dspan = 0.0;
  };

  StepProgram(const VelocityField& field, Index rows, Spec spec);

  Index rows() const { return rows_; }

  /// Rebinds the parameter leaves to a field of the same architecture.
  void set_parameters(const VelocityField& field);

  /// Binds Hutchinson probes, one [rows, d] matrix per probe.
  void set_probes(const std::vector<RowMatrix>& probes);

  Output forward(const RowMatrix& z, double t_start, double span, int step);
  Adjoint backward(const RowMatrix& z, double t_start, double span, int step, const RowMatrix& seed_z,
                   const Eigen::VectorXd& seed_div, const Eigen::VectorXd& seed_reg);

 private:
  void bind_step(const RowMatrix& z, double t_start, double span, int step);

  Index rows_;
  Index dim_;
  Spec spec_;
  std::unique_ptr<ExprGraph> graph_;
  Bindings bindings_;
  Expr z_, t_start_, span_, frac_, seed_z_, seed_div_, seed_reg_;
  std::vector<Expr> params_;
  std::vector<Expr> probes_;
  Expr z_out_, div_, reg_;
};

/// Result of integrating one chunk with a StepProgram.
struct ChunkRun {
  std::vector<RowMatrix> states;  // steps + 1 entries when kept, else just the final one
  Eigen::VectorXd div;            // integral of the divergence over the signed time span
  Eigen::VectorXd reg;            // integral of the regularizer
};

ChunkRun run_chunk(StepProgram& program, const RowMatrix& z0, double t_start, double span, int steps,
                   bool keep_states);

struct ChunkGradient {
  RowMatrix dz0;
  Eigen::VectorXd dtheta;
  double dt_start = 0.0;
  double dspan = 0.0;
};

/// Reverse sweep over a kept-state ChunkRun for the loss
///   <seed_z_end, z_end> + <seed_div, div> + <seed_reg, reg>.
ChunkGradient backprop_chunk(StepProgram& program, const ChunkRun& run, double t_start, double span, int steps,
                             const RowMatrix& seed_z_end, const Eigen::VectorXd& seed_div,
                             const Eigen::VectorXd& seed_reg);

/// Rademacher probes for rows [first, first + rows), deterministic per particle.
std::vector<RowMatrix> make_probes(const DivergenceMode& mode, std::uint64_t first_particle, Index rows, Index d);

/// Runs fn(chunk_index, begin_row, end_row) over fixed-size chunks.
void for_each_chunk(Index n_rows, int threads, const std::function<void(std::size_t, Index, Index)>& fn);

}  // namespace nwflow
