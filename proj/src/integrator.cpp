#include "nwflow/integrator.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "nwflow/rng.hpp"

namespace nwflow {

void IntegratorConfig::validate() const {
  if (steps < 1) throw ContractError("integrator needs at least one step");
  if (divergence.kind == DivergenceMode::Kind::hutchinson && divergence.probes < 1) {
    throw ContractError("Hutchinson divergence needs at least one probe");
  }
}

double standard_normal_logpdf(const Eigen::Ref<const Eigen::VectorXd>& z) {
  return -0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

void for_each_chunk(Index n_rows, int threads, const std::function<void(std::size_t, Index, Index)>& fn) {
  const std::size_t n_chunks = static_cast<std::size_t>((n_rows + kChunkRows - 1) / kChunkRows);
  auto range = [&](std::size_t c) {
    const Index begin = static_cast<Index>(c) * kChunkRows;
    return std::pair{begin, std::min(n_rows, begin + kChunkRows)};
  };
  const std::size_t workers = std::min<std::size_t>(n_chunks, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      auto [b, e] = range(c);
      fn(c, b, e);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first_error;
  std::size_t first_error_chunk = n_chunks;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < n_chunks; c = next++) {
          try {
            auto [b, e] = range(c);
            fn(c, b, e);
          } catch (...) {
            std::lock_guard lock(mu);
            if (c < first_error_chunk) {
              first_error_chunk = c;
              first_error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<RowMatrix> make_probes(const DivergenceMode& mode, std::uint64_t first_particle, Index rows, Index d) {
  std::vector<RowMatrix> probes(static_cast<std::size_t>(mode.probes), RowMatrix(rows, d));
  for (Index i = 0; i < rows; ++i) {
    Rng rng(derive_seed(mode.seed, first_particle + static_cast<std::uint64_t>(i)));
    for (auto& p : probes) {
      for (Index j = 0; j < d; ++j) p(i, j) = rng.rademacher();
    }
  }
  return probes;
}

// ---------------------------------------------------------------------------

StepProgram::StepProgram(const VelocityField& field, Index rows, Spec spec)
    : rows_(rows), dim_(field.dim()), spec_(std::move(spec)), graph_(std::make_unique<ExprGraph>()) {
  if (spec_.steps < 1) throw ContractError("integrator needs at least one step");
  ExprGraph& g = *graph_;
  z_ = g.leaf("z");
  t_start_ = g.leaf("t_start");
  span_ = g.leaf("span");
  frac_ = g.leaf("step_fraction");
  seed_z_ = g.leaf("seed_z");
  seed_div_ = g.leaf("seed_div");
  seed_reg_ = g.leaf("seed_reg");
  const auto blocks = field.parameter_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) params_.push_back(g.leaf("theta" + std::to_string(i)));
  bind_parameters(bindings_, params_, field);
  const bool hutchinson = spec_.divergence && spec_.divergence_mode.kind == DivergenceMode::Kind::hutchinson;
  if (hutchinson) {
    for (int p = 0; p < spec_.divergence_mode.probes; ++p) probes_.push_back(g.leaf("probe" + std::to_string(p)));
  }
  if (spec_.functional && spec_.functional->dim != dim_) throw ShapeError("functional and field dimensions differ");

  const Expr ones = g.constant(Tensor::filled({rows, 1}, 1.0));
  const Expr h = scale(span_, 1.0 / spec_.steps);
  const Expr tk = t_start_ + span_ * frac_;

  struct Stage {
    Expr k, div, reg;
  };
  auto stage = [&](Expr zs, Expr ts) {
    Stage s;
    s.k = field.build(zs, matmul(ones, ts), params_);
    if (spec_.divergence) {
      s.div = hutchinson ? divergence_probe_expr(s.k, zs, probes_, dim_) : divergence_exact_expr(s.k, zs, rows, dim_);
    }
    if (spec_.functional) s.reg = row_sum(square(s.k + first_variation_gradient_expr(*spec_.functional, zs)), dim_);
    return s;
  };
  auto combine = [](const std::vector<Stage>& st, Expr Stage::*member, Expr weight) {
    if (!(st[0].*member).valid()) return Expr{};
    if (st.size() == 1) return (st[0].*member) * weight;
    const Expr acc = st[0].*member + scale(st[1].*member, 2.0) + scale(st[2].*member, 2.0) + st[3].*member;
    return acc * weight;
  };

  std::vector<Stage> stages;
  Expr weight = h;
  if (spec_.method == Method::euler) {
    stages.push_back(stage(z_, tk));
  } else {
    const Expr half = scale(h, 0.5);
    const Expr t_mid = tk + half;
    stages.push_back(stage(z_, tk));
    stages.push_back(stage(z_ + stages[0].k * half, t_mid));
    stages.push_back(stage(z_ + stages[1].k * half, t_mid));
    stages.push_back(stage(z_ + stages[2].k * h, tk + h));
    weight = scale(h, 1.0 / 6.0);
  }
  z_out_ = z_ + combine(stages, &Stage::k, weight);
  div_ = combine(stages, &Stage::div, weight);
  reg_ = combine(stages, &Stage::reg, weight);

  Expr loss = sum(z_out_ * seed_z_);
  if (div_.valid()) loss = loss + sum(div_ * seed_div_);
  if (reg_.valid()) loss = loss + sum(reg_ * seed_reg_);
  g.set_output(loss);

  bindings_.set(seed_z_, Tensor::zeros({rows, dim_}));
  bindings_.set(seed_div_, Tensor::zeros({rows, 1}));
  bindings_.set(seed_reg_, Tensor::zeros({rows, 1}));
  for (std::size_t p = 0; p < probes_.size(); ++p) bindings_.set(probes_[p], Tensor::zeros({rows, dim_}));
}

void StepProgram::set_parameters(const VelocityField& field) {
  if (field.dim() != dim_) throw ShapeError("field dimension differs from the compiled program");
  bind_parameters(bindings_, params_, field);
}

void StepProgram::set_probes(const std::vector<RowMatrix>& probes) {
  if (probes.size() != probes_.size()) throw ContractError("probe count does not match the program");
  for (std::size_t p = 0; p < probes.size(); ++p) bindings_.set(probes_[p], Tensor::matrix(probes[p]));
}

void StepProgram::bind_step(const RowMatrix& z, double t_start, double span, int step) {
  if (z.rows() != rows_ || z.cols() != dim_) throw ShapeError("state batch does not match the step program");
  bindings_.set(z_, Tensor::matrix(z));
  bindings_.set(t_start_, Tensor::filled({1, 1}, t_start));
  bindings_.set(span_, Tensor::filled({1, 1}, span));
  bindings_.set(frac_, Tensor::filled({1, 1}, static_cast<double>(step) / spec_.steps));
}

StepProgram::Output StepProgram::forward(const RowMatrix& z, double t_start, double span, int step) {
  bind_step(z, t_start, span, step);
  const Evaluation ev = evaluate(*graph_, bindings_);
  Output out;
  out.z = ev.value(z_out_).mat();
  out.div = div_.valid() ? Eigen::VectorXd(ev.value(div_).data()) : Eigen::VectorXd::Zero(rows_);
  out.reg = reg_.valid() ? Eigen::VectorXd(ev.value(reg_).data()) : Eigen::VectorXd::Zero(rows_);
  return out;
}

StepProgram::Adjoint StepProgram::backward(const RowMatrix& z, double t_start, double span, int step,
                                           const RowMatrix& seed_z, const Eigen::VectorXd& seed_div,
                                           const Eigen::VectorXd& seed_reg) {
  bind_step(z, t_start, span, step);
  bindings_.set(seed_z_, Tensor::matrix(seed_z));
  bindings_.set(seed_div_, Tensor({rows_, 1}, seed_div));
  bindings_.set(seed_reg_, Tensor({rows_, 1}, seed_reg));
  std::vector<Expr> wrt{z_, t_start_, span_};
  wrt.insert(wrt.end(), params_.begin(), params_.end());
  const Evaluation ev = evaluate(*graph_, bindings_);
  Gradients grads = reverse_grad(ev, wrt);
  Adjoint adj;
  adj.dz = grads.at(z_.id()).mat();
  adj.dt_start = grads.at(t_start_.id())[0];
  adj.dspan = grads.at(span_.id())[0];
  for (const Expr& p : params_) adj.dparams.push_back(std::move(grads.at(p.id())));
  return adj;
}

ChunkRun run_chunk(StepProgram& program, const RowMatrix& z0, double t_start, double span, int steps,
                   bool keep_states) {
  ChunkRun run;
  run.div = Eigen::VectorXd::Zero(z0.rows());
  run.reg = Eigen::VectorXd::Zero(z0.rows());
  run.states.push_back(z0);
  for (int k = 0; k < steps; ++k) {
    StepProgram::Output out;
    try {
      out = program.forward(run.states.back(), t_start, span, k);
    } catch (const NumericError& e) {
      throw NumericError("integration step " + std::to_string(k) + ": " + e.what());
    }
    run.div += out.div;
    run.reg += out.reg;
    if (keep_states) {
      run.states.push_back(std::move(out.z));
    } else {
      run.states.back() = std::move(out.z);
    }
  }
  return run;
}

ChunkGradient backprop_chunk(StepProgram& program, const ChunkRun& run, double t_start, double span, int steps,
                             const RowMatrix& seed_z_end, const Eigen::VectorXd& seed_div,
                             const Eigen::VectorXd& seed_reg) {
  if (static_cast<int>(run.states.size()) != steps + 1) throw ContractError("backprop needs every step's state");
  ChunkGradient out;
  RowMatrix adj = seed_z_end;
  for (int k = steps - 1; k >= 0; --k) {
    StepProgram::Adjoint a;
    try {
      a = program.backward(run.states[static_cast<std::size_t>(k)], t_start, span, k, adj, seed_div, seed_reg);
    } catch (const NumericError& e) {
      throw NumericError("integration step " + std::to_string(k) + " (reverse): " + e.what());
    }
    adj = std::move(a.dz);
    const Eigen::VectorXd dtheta = flatten_blocks(a.dparams);
    if (out.dtheta.size() == 0) {
      out.dtheta = dtheta;
    } else {
      out.dtheta += dtheta;
    }
    out.dt_start += a.dt_start;
    out.dspan += a.dspan;
  }
  out.dz0 = std::move(adj);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_span(double t0, double t1) {
  if (!(t1 > t0)) throw ContractError("integration needs t1 > t0");
}

StepProgram::Spec make_spec(const IntegratorConfig& cfg, bool divergence,
                            const std::optional<FunctionalDescriptor>& functional) {
  cfg.validate();
  StepProgram::Spec spec;
  spec.method = cfg.method;
  spec.steps = cfg.steps;
  spec.divergence = divergence;
  spec.divergence_mode = cfg.divergence;
  spec.functional = functional;
  return spec;
}

/// Shared driver: integrates every chunk of `z_start` over [t_start, t_start + span].
struct BatchRun {
  Eigen::MatrixXd z;
  Eigen::VectorXd div;
  Eigen::VectorXd reg;
};

BatchRun run_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z_start, double t_start,
                   double span, const StepProgram::Spec& spec, const BatchOptions& opts,
                   std::vector<std::vector<RowMatrix>>* states, std::vector<std::vector<Eigen::VectorXd>>* div_paths) {
  if (z_start.cols() != field.dim()) throw ShapeError("batch dimension does not match the field");
  const Index n = z_start.rows();
  BatchRun out{Eigen::MatrixXd(n, field.dim()), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  const std::size_t n_chunks = static_cast<std::size_t>((n + kChunkRows - 1) / kChunkRows);
  if (states) states->assign(n_chunks, {});
  if (div_paths) div_paths->assign(n_chunks, {});

  for_each_chunk(n, opts.threads, [&](std::size_t c, Index begin, Index end) {
    const Index rows = end - begin;
    StepProgram program(field, rows, spec);
    if (spec.divergence && spec.divergence_mode.kind == DivergenceMode::Kind::hutchinson) {
      program.set_probes(make_probes(spec.divergence_mode, opts.first_particle + static_cast<std::uint64_t>(begin),
                                     rows, field.dim()));
    }
    RowMatrix z = z_start.middleRows(begin, rows);
    Eigen::VectorXd div = Eigen::VectorXd::Zero(rows);
    Eigen::VectorXd reg = Eigen::VectorXd::Zero(rows);
    if (states) (*states)[c].push_back(z);
    if (div_paths) (*div_paths)[c].push_back(div);
    for (int k = 0; k < spec.steps; ++k) {
      StepProgram::Output step;
      try {
        step = program.forward(z, t_start, span, k);
      } catch (const NumericError& e) {
        throw NumericError("integration step " + std::to_string(k) + ": " + e.what());
      }
      z = std::move(step.z);
      div += step.div;
      reg += step.reg;
      if (states) (*states)[c].push_back(z);
      if (div_paths) (*div_paths)[c].push_back(div);
    }
    out.z.middleRows(begin, rows) = z;
    out.div.segment(begin, rows) = div;
    out.reg.segment(begin, rows) = reg;
  });
  return out;
}

void collect_trajectory(Trajectory& traj, const std::vector<std::vector<RowMatrix>>& states,
                        const std::vector<std::vector<Eigen::VectorXd>>* div_paths,
                        const Eigen::Ref<const Eigen::VectorXd>& logp0, double t0, double t1, int steps) {
  traj = {};
  const Index n = logp0.size();
  const Index d = states.empty() ? 0 : states.front().front().cols();
  for (int k = 0; k <= steps; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    traj.t.push_back(t0 + (t1 - t0) * static_cast<double>(k) / steps);
    Eigen::MatrixXd z(n, d);
    Eigen::VectorXd logp(div_paths ? n : 0);
    Index offset = 0;
    for (std::size_t c = 0; c < states.size(); ++c) {
      const auto& s = states[c][ks];
      z.middleRows(offset, s.rows()) = s;
      if (div_paths) logp.segment(offset, s.rows()) = logp0.segment(offset, s.rows()) - (*div_paths)[c][ks];
      offset += s.rows();
    }
    traj.z.push_back(std::move(z));
    if (div_paths) traj.logp.push_back(std::move(logp));
  }
}

}  // namespace

Eigen::MatrixXd push_forward_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z0, double t0,
                                   double t1, const IntegratorConfig& cfg, const BatchOptions& opts) {
  check_span(t0, t1);
  const auto spec = make_spec(cfg, false, std::nullopt);
  std::vector<std::vector<RowMatrix>> states;
  const bool record = opts.trajectory != nullptr;
  BatchRun run = run_batch(field, z0, t0, t1 - t0, spec, opts, record ? &states : nullptr, nullptr);
  if (record) collect_trajectory(*opts.trajectory, states, nullptr, Eigen::VectorXd::Zero(z0.rows()), t0, t1, cfg.steps);
  return std::move(run.z);
}

FlowBatch integrate_forward_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z0,
                                  const Eigen::Ref<const Eigen::VectorXd>& logp0, double t0, double t1,
                                  const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                                  const BatchOptions& opts) {
  check_span(t0, t1);
  if (logp0.size() != z0.rows()) throw ShapeError("one initial log-density per particle required");
  const auto spec = make_spec(cfg, true, functional);
  std::vector<std::vector<RowMatrix>> states;
  std::vector<std::vector<Eigen::VectorXd>> div_paths;
  const bool record = opts.trajectory != nullptr;
  BatchRun run = run_batch(field, z0, t0, t1 - t0, spec, opts, record ? &states : nullptr,
                           record ? &div_paths : nullptr);
  if (record) {
    collect_trajectory(*opts.trajectory, states, &div_paths, logp0, t0, t1, cfg.steps);
  }
  return FlowBatch{std::move(run.z), logp0 - run.div, std::move(run.reg), t1};
}

FlowState integrate_forward(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z0, double logp0,
                            double t0, double t1, const std::optional<FunctionalDescriptor>& functional,
                            const IntegratorConfig& cfg) {
  const Eigen::MatrixXd row = z0.transpose();
  const FlowBatch b = integrate_forward_batch(field, row, Eigen::VectorXd::Constant(1, logp0), t0, t1, functional, cfg);
  return FlowState{b.z.row(0).transpose(), b.logp[0], b.reg[0], b.t};
}

Eigen::MatrixXd integrate_inverse_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& z1,
                                        double t1, double t0, const IntegratorConfig& cfg, const BatchOptions& opts) {
  check_span(t0, t1);
  const auto spec = make_spec(cfg, false, std::nullopt);
  return run_batch(field, z1, t1, t0 - t1, spec, opts, nullptr, nullptr).z;
}

Eigen::VectorXd integrate_inverse(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& z1, double t1,
                                  double t0, const IntegratorConfig& cfg) {
  const Eigen::MatrixXd row = z1.transpose();
  return integrate_inverse_batch(field, row, t1, t0, cfg).row(0).transpose();
}

Eigen::VectorXd log_likelihood_batch(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& x, double t0,
                                     double t1, const IntegratorConfig& cfg, const BatchOptions& opts) {
  check_span(t0, t1);
  const auto spec = make_spec(cfg, true, std::nullopt);
  const BatchRun run = run_batch(field, x, t1, t0 - t1, spec, opts, nullptr, nullptr);
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out[i] = standard_normal_logpdf(run.z.row(i).transpose()) + run.div[i];
  return out;
}

double log_likelihood(const VelocityField& field, const Eigen::Ref<const Eigen::VectorXd>& x, double t0, double t1,
                      const IntegratorConfig& cfg) {
  const Eigen::MatrixXd row = x.transpose();
  return log_likelihood_batch(field, row, t0, t1, cfg)[0];
}

}  // namespace nwflow
