#include "nwflow/field.hpp"

#include <cmath>
#include <string>

#include "nwflow/rng.hpp"

namespace nwflow {

std::vector<std::pair<Index, Index>> MlpSpec::layers() const {
  std::vector<std::pair<Index, Index>> out;
  Index in = input_dim + 1;
  for (Index width : hidden) {
    out.emplace_back(in, width);
    in = width;
  }
  out.emplace_back(in, input_dim);
  return out;
}

Index MlpSpec::parameter_count() const {
  Index count = 0;
  for (auto [in, out] : layers()) count += in * out + out;
  return count;
}

void MlpSpec::validate() const {
  if (input_dim < 1) throw ContractError("MLP input dimension must be positive");
  if (hidden.empty()) throw ContractError("MLP needs at least one hidden layer");
  for (Index w : hidden) {
    if (w < 1) throw ContractError("hidden layer widths must be positive");
  }
}

FieldParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  FieldParams p{spec, Eigen::VectorXd::Zero(spec.parameter_count())};
  Rng rng(seed);
  Index offset = 0;
  for (auto [in, out] : spec.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Index i = 0; i < in * out; ++i) p.theta[offset + i] = (2.0 * rng.uniform() - 1.0) * bound;
    offset += in * out + out;  // biases stay zero
  }
  return p;
}

// ---------------------------------------------------------------------------

MlpField::MlpField(FieldParams params) : params_(std::move(params)) {
  params_.spec.validate();
  if (params_.theta.size() != params_.spec.parameter_count()) {
    throw ContractError("theta has " + std::to_string(params_.theta.size()) + " entries, the architecture needs " +
                        std::to_string(params_.spec.parameter_count()));
  }
}

std::vector<Tensor> MlpField::parameter_blocks() const {
  std::vector<Tensor> blocks;
  Index offset = 0;
  for (auto [in, out] : params_.spec.layers()) {
    blocks.emplace_back(Shape{out, in}, params_.theta.segment(offset, in * out));
    offset += in * out;
    blocks.emplace_back(Shape{out}, params_.theta.segment(offset, out));
    offset += out;
  }
  return blocks;
}

Expr MlpField::build(Expr z, Expr t, std::span<const Expr> params) const {
  const std::size_t n_layers = params_.spec.hidden.size() + 1;
  if (params.size() != 2 * n_layers) throw ContractError("MLP field needs one weight and bias leaf per layer");
  Expr h = concat(z, t);
  for (std::size_t l = 0; l + 1 < n_layers; ++l) h = tanh(affine(h, params[2 * l], params[2 * l + 1]));
  return affine(h, params[2 * n_layers - 2], params[2 * n_layers - 1]);
}

AffineField::AffineField(Eigen::MatrixXd a, Eigen::VectorXd b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols() || b_.size() != a_.rows()) throw ContractError("affine field needs square A and matching b");
}

AffineField AffineField::negative_identity(Index d) {
  return {-Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
}

std::vector<Tensor> AffineField::parameter_blocks() const {
  return {Tensor::matrix(a_), Tensor::vector(b_)};
}

Expr AffineField::build(Expr z, Expr /*t*/, std::span<const Expr> params) const {
  if (params.size() != 2) throw ContractError("affine field needs A and b leaves");
  return affine(z, params[0], params[1]);
}

Expr ZeroField::build(Expr z, Expr /*t*/, std::span<const Expr> /*params*/) const { return scale(z, 0.0); }

Expr SquareField::build(Expr z, Expr /*t*/, std::span<const Expr> /*params*/) const { return square(z); }

// ---------------------------------------------------------------------------

Bindings FieldGraph::bind(const VelocityField& field, const Eigen::Ref<const RowMatrix>& z_batch, double time) const {
  Bindings b;
  b.set(z, Tensor::matrix(z_batch));
  b.set(t, Tensor::filled({z_batch.rows(), 1}, time));
  bind_parameters(b, params, field);
  return b;
}

FieldGraph build_field_graph(const VelocityField& field) {
  FieldGraph fg;
  fg.graph = std::make_unique<ExprGraph>();
  fg.z = fg.graph->leaf("z");
  fg.t = fg.graph->leaf("t");
  const auto blocks = field.parameter_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) fg.params.push_back(fg.graph->leaf("theta" + std::to_string(i)));
  fg.out = field.build(fg.z, fg.t, fg.params);
  fg.graph->set_output(fg.out);
  return fg;
}

void bind_parameters(Bindings& bindings, std::span<const Expr> leaves, const VelocityField& field) {
  auto blocks = field.parameter_blocks();
  if (blocks.size() != leaves.size()) throw ContractError("parameter leaf count mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i) bindings.set(leaves[i], std::move(blocks[i]));
}

Eigen::VectorXd flatten_blocks(std::span<const Tensor> blocks) {
  Index n = 0;
  for (const auto& b : blocks) n += b.size();
  Eigen::VectorXd flat(n);
  Index offset = 0;
  for (const auto& b : blocks) {
    flat.segment(offset, b.size()) = b.data();
    offset += b.size();
  }
  return flat;
}

Expr row_sum(Expr x, Index cols) {
  return matmul(x, x.graph().constant(Tensor::filled({cols, 1}, 1.0)));
}

Expr divergence_exact_expr(Expr f, Expr z, Index rows, Index d) {
  ExprGraph& g = f.graph();
  Expr diag;
  for (Index i = 0; i < d; ++i) {
    RowMatrix basis = RowMatrix::Zero(rows, d);
    basis.col(i).setOnes();
    const Expr e = g.constant(Tensor::matrix(basis));
    const Expr jv = tangent(f, z, e);
    if (!jv.valid()) continue;
    diag = diag.valid() ? diag + jv * e : jv * e;
  }
  if (!diag.valid()) return scale(row_sum(z, d), 0.0);
  return row_sum(diag, d);
}

Expr divergence_probe_expr(Expr f, Expr z, std::span<const Expr> probes, Index d) {
  if (probes.empty()) throw ContractError("Hutchinson estimator needs at least one probe");
  Expr acc;
  for (const Expr& eps : probes) {
    const Expr jv = tangent(f, z, eps);
    if (!jv.valid()) continue;
    acc = acc.valid() ? acc + jv * eps : jv * eps;
  }
  if (!acc.valid()) return scale(row_sum(z, d), 0.0);
  return scale(row_sum(acc, d), 1.0 / static_cast<double>(probes.size()));
}

namespace {

void check_dim(const VelocityField& field, Index got) {
  if (got != field.dim()) {
    throw ShapeError("point has dimension " + std::to_string(got) + ", field expects " + std::to_string(field.dim()));
  }
}

}  // namespace

Eigen::VectorXd eval_velocity(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t) {
  check_dim(field, z.size());
  const FieldGraph fg = build_field_graph(field);
  const RowMatrix row = z.transpose();
  return eval_graph(*fg.graph, fg.bind(field, row, t)).data();
}

Eigen::MatrixXd eval_velocity_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z, double t) {
  check_dim(field, z.cols());
  if (z.rows() == 0) return Eigen::MatrixXd(0, z.cols());
  const FieldGraph fg = build_field_graph(field);
  const RowMatrix rows = z;
  return eval_graph(*fg.graph, fg.bind(field, rows, t)).mat();
}

double divergence_exact(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t) {
  const Index d = field.dim();
  check_dim(field, z.size());
  if (d > kMaxExactDivergenceDim) {
    throw ContractError("exact divergence needs " + std::to_string(d) +
                        " forward passes; use the Hutchinson estimator above dimension " +
                        std::to_string(kMaxExactDivergenceDim));
  }
  const FieldGraph fg = build_field_graph(field);
  const RowMatrix row = z.transpose();
  const Bindings b = fg.bind(field, row, t);
  double div = 0.0;
  for (Index i = 0; i < d; ++i) {
    Tensor e = Tensor::zeros({1, d});
    e[i] = 1.0;
    div += jvp(*fg.graph, b, fg.z, e)[i];
  }
  return div;
}

double divergence_hutchinson(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z, double t,
                             int probes, std::uint64_t seed) {
  if (probes < 1) throw ContractError("Hutchinson estimator needs at least one probe");
  const Index d = field.dim();
  check_dim(field, z.size());
  const FieldGraph fg = build_field_graph(field);
  const RowMatrix row = z.transpose();
  const Bindings b = fg.bind(field, row, t);
  Rng rng(seed);
  double total = 0.0;
  for (int p = 0; p < probes; ++p) {
    Tensor eps = Tensor::zeros({1, d});
    for (Index i = 0; i < d; ++i) eps[i] = rng.rademacher();
    total += eps.data().dot(jvp(*fg.graph, b, fg.z, eps).data());
  }
  return total / probes;
}

}  // namespace nwflow
