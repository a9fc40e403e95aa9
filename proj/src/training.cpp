#include "nwflow/training.hpp"

#include <chrono>
#include <cmath>
#include <memory>

#include "nwflow/rng.hpp"

namespace nwflow {

void TrainConfig::validate() const {
  spec.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("lambda must be a finite non-negative number");
  if (batch_size < 1) throw ContractError("batch_size must be at least 1");
  if (prior_batch < 1) throw ContractError("prior_batch must be at least 1");
  if (epochs < 0) throw ContractError("epochs must be non-negative");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ContractError("learning_rate must be positive");
  if (!(t1 > 0.0) || !std::isfinite(t1)) throw ContractError("t1 must be positive (t0 is 0)");
  if (mu_samples < 1) throw ContractError("mu_samples must be at least 1");
  if (threads < 1) throw ContractError("threads must be at least 1");
  integrator.validate();
  if (functional == FunctionalKind::expectation) FunctionalDescriptor::expectation(spec.input_dim, phi);
}

AdamState AdamState::zeros(Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0}; }

AdamResult adam_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& grads, const AdamState& state, double lr,
                     double beta1, double beta2, double eps) {
  if (grads.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw ShapeError("Adam needs theta, gradient and moments of equal length");
  }
  AdamResult out{theta, state};
  AdamState& s = out.state;
  s.step += 1;
  s.m = beta1 * state.m + (1.0 - beta1) * grads;
  s.v = beta2 * state.v + (1.0 - beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
  out.theta = theta.array() - lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
  return out;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw ContractError("softplus is positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

namespace {

double row_sum_in_order(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += v[i];
  return s;
}

/// Owns one compiled step program per chunk for the likelihood and the
/// regularizer passes, so repeated steps only rebind leaves.
class LossEngine {
 public:
  LossEngine(IntegratorConfig cfg, int threads) : cfg_(std::move(cfg)), threads_(threads) { cfg_.validate(); }

  void set_functional(std::optional<FunctionalDescriptor> functional) {
    functional_ = std::move(functional);
    reg_programs_.clear();
  }

  void set_divergence_seed(std::uint64_t seed) { cfg_.divergence.seed = seed; }

  LossGradient evaluate(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                        const Eigen::Ref<const Eigen::MatrixXd>& prior, double t1, double lambda, bool want_grad) {
    if (batch.rows() < 1) throw ContractError("loss needs a non-empty batch");
    if (batch.cols() != field.dim()) throw ShapeError("batch dimension does not match the field");
    if (!(t1 > 0.0)) throw ContractError("t1 must be positive");
    LossGradient out;
    const Index n_params = flatten_blocks(field.parameter_blocks()).size();
    out.dtheta = Eigen::VectorXd::Zero(n_params);

    // Likelihood: data at t1 integrated back to the prior at t0 = 0.
    {
      const Index m = batch.rows();
      const std::size_t n_chunks = static_cast<std::size_t>((m + kChunkRows - 1) / kChunkRows);
      ensure(nll_programs_, n_chunks);
      std::vector<ChunkGradient> grads(n_chunks);
      Eigen::VectorXd logp(m);
      StepProgram::Spec spec{cfg_.method, cfg_.steps, true, cfg_.divergence, std::nullopt};
      for_each_chunk(m, threads_, [&](std::size_t c, Index begin, Index end) {
        const Index rows = end - begin;
        StepProgram& p = program(nll_programs_[c], field, rows, spec);
        if (cfg_.divergence.kind == DivergenceMode::Kind::hutchinson) {
          p.set_probes(make_probes(cfg_.divergence, static_cast<std::uint64_t>(begin), rows, field.dim()));
        }
        const RowMatrix x = batch.middleRows(begin, rows);
        const ChunkRun run = run_chunk(p, x, t1, -t1, cfg_.steps, want_grad);
        const RowMatrix& z0 = run.states.back();
        for (Index i = 0; i < rows; ++i) logp[begin + i] = standard_normal_logpdf(z0.row(i).transpose()) + run.div[i];
        if (want_grad) {
          const RowMatrix seed_z = z0 / static_cast<double>(m);
          const Eigen::VectorXd seed_div = Eigen::VectorXd::Constant(rows, -1.0 / static_cast<double>(m));
          grads[c] = backprop_chunk(p, run, t1, -t1, cfg_.steps, seed_z, seed_div, Eigen::VectorXd::Zero(rows));
        }
      });
      out.value.nll = -row_sum_in_order(logp) / static_cast<double>(m);
      if (want_grad) {
        for (const auto& g : grads) {
          out.dtheta += g.dtheta;
          out.dt1 += g.dt_start - g.dspan;
        }
      }
    }

    // Regularizer: prior particles carried forward from t0 = 0 to t1.
    if (functional_) {
      if (prior.cols() != field.dim()) throw ShapeError("prior batch dimension does not match the field");
      const Index n = prior.rows();
      if (n < 1) throw ContractError("regularizer needs a non-empty prior batch");
      const bool reg_grad = want_grad && lambda > 0.0;
      const std::size_t n_chunks = static_cast<std::size_t>((n + kChunkRows - 1) / kChunkRows);
      ensure(reg_programs_, n_chunks);
      std::vector<ChunkGradient> grads(n_chunks);
      Eigen::VectorXd reg(n);
      StepProgram::Spec spec{cfg_.method, cfg_.steps, false, cfg_.divergence, functional_};
      for_each_chunk(n, threads_, [&](std::size_t c, Index begin, Index end) {
        const Index rows = end - begin;
        StepProgram& p = program(reg_programs_[c], field, rows, spec);
        const RowMatrix z = prior.middleRows(begin, rows);
        const ChunkRun run = run_chunk(p, z, 0.0, t1, cfg_.steps, reg_grad);
        reg.segment(begin, rows) = run.reg;
        if (reg_grad) {
          grads[c] = backprop_chunk(p, run, 0.0, t1, cfg_.steps, RowMatrix::Zero(rows, field.dim()),
                                    Eigen::VectorXd::Zero(rows),
                                    Eigen::VectorXd::Constant(rows, lambda / static_cast<double>(n)));
        }
      });
      out.value.reg = row_sum_in_order(reg) / static_cast<double>(n);
      if (reg_grad) {
        for (const auto& g : grads) {
          out.dtheta += g.dtheta;
          out.dt1 += g.dspan;
        }
      }
    }
    out.value.total = out.value.nll + lambda * out.value.reg;
    return out;
  }

 private:
  static void ensure(std::vector<std::unique_ptr<StepProgram>>& cache, std::size_t n) {
    if (cache.size() < n) cache.resize(n);
  }

  static StepProgram& program(std::unique_ptr<StepProgram>& slot, const VelocityField& field, Index rows,
                              const StepProgram::Spec& spec) {
    if (!slot || slot->rows() != rows) {
      slot = std::make_unique<StepProgram>(field, rows, spec);
    } else {
      slot->set_parameters(field);
    }
    return *slot;
  }

  IntegratorConfig cfg_;
  int threads_;
  std::optional<FunctionalDescriptor> functional_;
  std::vector<std::unique_ptr<StepProgram>> nll_programs_;
  std::vector<std::unique_ptr<StepProgram>> reg_programs_;
};

}  // namespace

double nll_loss(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch, double t1,
                const IntegratorConfig& cfg, int threads) {
  LossEngine engine(cfg, threads);
  return engine.evaluate(field, batch, Eigen::MatrixXd(0, field.dim()), t1, 0.0, false).value.nll;
}

LossValue regularized_loss(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                           const Eigen::Ref<const Eigen::MatrixXd>& prior_batch, double t1, double lambda,
                           const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                           int threads) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
  LossEngine engine(cfg, threads);
  engine.set_functional(functional);
  return engine.evaluate(field, batch, prior_batch, t1, lambda, false).value;
}

LossGradient regularized_loss_grad(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& batch,
                                   const Eigen::Ref<const Eigen::MatrixXd>& prior_batch, double t1, double lambda,
                                   const std::optional<FunctionalDescriptor>& functional, const IntegratorConfig& cfg,
                                   int threads) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
  LossEngine engine(cfg, threads);
  engine.set_functional(functional);
  return engine.evaluate(field, batch, prior_batch, t1, lambda, true);
}

Eigen::MatrixXd sample_model(const VelocityField& field, Index n, std::uint64_t seed, double t1,
                             const IntegratorConfig& cfg, int threads) {
  Rng rng(seed);
  const Eigen::MatrixXd z0 = rng.normal_matrix(n, field.dim());
  BatchOptions opts;
  opts.threads = threads;
  return push_forward_batch(field, z0, 0.0, t1, cfg, opts);
}

namespace {

std::optional<FunctionalDescriptor> make_functional(const TrainConfig& cfg, const MlpField& field, double t1,
                                                    std::uint64_t mu_seed) {
  const Index d = cfg.spec.input_dim;
  switch (cfg.functional) {
    case FunctionalKind::second_moment_half: return FunctionalDescriptor::second_moment_half(d);
    case FunctionalKind::expectation: return FunctionalDescriptor::expectation(d, cfg.phi);
    case FunctionalKind::eif_variance_mean: {
      const Eigen::MatrixXd samples = sample_model(field, cfg.mu_samples, mu_seed, t1, cfg.integrator, cfg.threads);
      return FunctionalDescriptor::eif_variance_mean(samples.colwise().mean().transpose());
    }
  }
  throw ContractError("unsupported functional kind");
}

}  // namespace

RunArtifacts train(const TrainConfig& config, const Eigen::Ref<const Eigen::MatrixXd>& data,
                   const EpochCallback& on_epoch) {
  config.validate();
  const Index d = config.spec.input_dim;
  if (data.cols() != d) {
    throw ShapeError("data has " + std::to_string(data.cols()) + " columns, model expects " + std::to_string(d));
  }
  if (data.rows() < config.batch_size) throw ContractError("training data has fewer rows than batch_size");
  if (!data.allFinite()) throw NumericError("training data contains non-finite values");

  RunArtifacts art;
  art.initial = init_params(config.spec, derive_seed(config.seed, 1));
  art.params = art.initial;
  art.t1 = config.t1;

  const Index n_theta = art.params.theta.size();
  Eigen::VectorXd x(n_theta + (config.learnable_t1 ? 1 : 0));
  x.head(n_theta) = art.params.theta;
  if (config.learnable_t1) x[n_theta] = inverse_softplus(config.t1);
  AdamState adam = AdamState::zeros(x.size());

  Rng shuffle_rng(derive_seed(config.seed, 2));
  Rng prior_rng(derive_seed(config.seed, 3));
  const std::uint64_t mu_base = derive_seed(config.seed, 4);
  const std::uint64_t probe_base = derive_seed(config.integrator.divergence.seed, 5);

  LossEngine engine(config.integrator, config.threads);
  const Index n = data.rows();
  const Index batches = n / config.batch_size;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::uint64_t global_step = 0;

  for (int epoch = 1; epoch <= config.epochs && !art.aborted; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    MlpField field(art.params);
    engine.set_functional(make_functional(config, field, art.t1, derive_seed(mu_base, static_cast<std::uint64_t>(epoch))));

    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(shuffle_rng.index(static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    for (Index b = 0; b < batches; ++b) {
      Eigen::MatrixXd batch(config.batch_size, d);
      for (Index r = 0; r < config.batch_size; ++r) {
        batch.row(r) = data.row(perm[static_cast<std::size_t>(b * config.batch_size + r)]);
      }
      const Eigen::MatrixXd prior = prior_rng.normal_matrix(config.prior_batch, d);
      engine.set_divergence_seed(derive_seed(probe_base, global_step++));

      LossGradient lg;
      try {
        lg = engine.evaluate(field, batch, prior, art.t1, config.lambda, true);
      } catch (const NumericError& e) {
        art.aborted = true;
        art.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
        break;
      }
      if (!std::isfinite(lg.value.total) || !lg.dtheta.allFinite() || !std::isfinite(lg.dt1)) {
        art.aborted = true;
        art.abort_reason = "epoch " + std::to_string(epoch) + ": non-finite loss or gradient";
        break;
      }
      rec.nll += lg.value.nll;
      rec.reg += lg.value.reg;
      rec.total += lg.value.total;

      Eigen::VectorXd g(x.size());
      g.head(n_theta) = lg.dtheta;
      if (config.learnable_t1) g[n_theta] = lg.dt1 / (1.0 + std::exp(-x[n_theta]));  // softplus' = sigmoid
      AdamResult step = adam_step(x, g, adam, config.learning_rate);
      if (!step.theta.allFinite()) {
        art.aborted = true;
        art.abort_reason = "epoch " + std::to_string(epoch) + ": non-finite parameters after update";
        break;
      }
      x = std::move(step.theta);
      adam = std::move(step.state);
      art.params.theta = x.head(n_theta);
      if (config.learnable_t1) art.t1 = softplus(x[n_theta]);
      field = MlpField(art.params);
    }
    if (art.aborted) break;
    rec.nll /= static_cast<double>(batches);
    rec.reg /= static_cast<double>(batches);
    rec.total /= static_cast<double>(batches);
    rec.t1 = art.t1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    art.log.push_back(rec);
    if (on_epoch) on_epoch(rec, art.params, art.t1);
  }
  return art;
}

}  // namespace nwflow
