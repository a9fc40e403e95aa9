#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/graph.hpp"
#include "nwflow/tensor.hpp"

namespace nwflow {

/// Time-conditioned tanh MLP: input is [z, t], output has the dimension of z.
struct MlpSpec {
  Index input_dim = 2;
  std::vector<Index> hidden{64, 64};

  /// Layer (in, out) sizes, input layer first.
  std::vector<std::pair<Index, Index>> layers() const;
  Index parameter_count() const;
  void validate() const;
};

/// Flat parameter vector; per layer the weight matrix [out, in] in row-major
/// order followed by the bias [out].
struct FieldParams {
  MlpSpec spec;
  Eigen::VectorXd theta;
};

FieldParams init_params(const MlpSpec& spec, std::uint64_t seed);

/// A velocity field f(z, t; theta) that can emit itself into an expression
/// graph. `z` is bound to a [n, d] batch and `t` to a [n, 1] column.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual Index dim() const = 0;
  /// Parameter tensors in the order `build` expects them.
  virtual std::vector<Tensor> parameter_blocks() const { return {}; }
  virtual Expr build(Expr z, Expr t, std::span<const Expr> params) const = 0;
};

class MlpField final : public VelocityField {
 public:
  explicit MlpField(FieldParams params);

  Index dim() const override { return params_.spec.input_dim; }
  std::vector<Tensor> parameter_blocks() const override;
  Expr build(Expr z, Expr t, std::span<const Expr> params) const override;

  const FieldParams& params() const { return params_; }

 private:
  FieldParams params_;
};

/// f(z) = A z + b, time independent.
class AffineField final : public VelocityField {
 public:
  AffineField(Eigen::MatrixXd a, Eigen::VectorXd b);
  static AffineField negative_identity(Index d);

  Index dim() const override { return a_.rows(); }
  std::vector<Tensor> parameter_blocks() const override;
  Expr build(Expr z, Expr t, std::span<const Expr> params) const override;

  const Eigen::MatrixXd& a() const { return a_; }
  const Eigen::VectorXd& b() const { return b_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
};

/// f = 0.
class ZeroField final : public VelocityField {
 public:
  explicit ZeroField(Index d) : d_(d) {}
  Index dim() const override { return d_; }
  Expr build(Expr z, Expr t, std::span<const Expr> params) const override;

 private:
  Index d_;
};

/// f(z) = (z_1^2, ..., z_d^2).
class SquareField final : public VelocityField {
 public:
  explicit SquareField(Index d) : d_(d) {}
  Index dim() const override { return d_; }
  Expr build(Expr z, Expr t, std::span<const Expr> params) const override;

 private:
  Index d_;
};

/// Leaves of a standalone graph computing f(z, t) for a batch.
struct FieldGraph {
  std::unique_ptr<ExprGraph> graph;
  Expr z;
  Expr t;
  std::vector<Expr> params;
  Expr out;

  Bindings bind(const VelocityField& field, const Eigen::Ref<const RowMatrix>& z_batch, double time) const;
};

FieldGraph build_field_graph(const VelocityField& field);
void bind_parameters(Bindings& bindings, std::span<const Expr> leaves, const VelocityField& field);

/// Concatenates per-block parameter gradients into the flat theta layout.
Eigen::VectorXd flatten_blocks(std::span<const Tensor> blocks);

Eigen::VectorXd eval_velocity(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t);
/// Rows of `z` are points; returns one velocity per row.
Eigen::MatrixXd eval_velocity_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z, double t);

inline constexpr Index kMaxExactDivergenceDim = 64;

/// Sums the columns of x ([n, cols]) into a [n, 1] column.
Expr row_sum(Expr x, Index cols);

/// Exact divergence of `f` with respect to `z` ([n, d] each) as a [n, 1]
/// column, built from d symbolic forward-mode passes.
Expr divergence_exact_expr(Expr f, Expr z, Index rows, Index d);

/// Hutchinson estimate of the divergence as a [n, 1] column; each probe is a
/// [n, d] node of Rademacher entries.
Expr divergence_probe_expr(Expr f, Expr z, std::span<const Expr> probes, Index d);

/// Sum of d_i f_i, one forward-mode pass per coordinate.
double divergence_exact(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t);

/// Mean over `probes` Rademacher vectors e of e^T (df/dz) e.
double divergence_hutchinson(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t,
                             int probes, std::uint64_t seed);

}  // namespace nwflow
