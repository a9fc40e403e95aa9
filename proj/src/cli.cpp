#include "nwflow/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numbers>

#include <CLI11.hpp>
#include <json.hpp>

#include "nwflow/checkpoint.hpp"
#include "nwflow/datasets.hpp"
#include "nwflow/io.hpp"
#include "nwflow/rng.hpp"

namespace nwflow {

namespace fs = std::filesystem;

namespace {

std::vector<KeyInfo> integrator_keys() {
  return {
      {"integrator.method", ValueType::string, "\"rk4\"", "euler or rk4"},
      {"integrator.steps", ValueType::integer, "100", "fixed steps over [t0, t1]"},
      {"integrator.divergence", ValueType::string, "\"exact\"", "exact or hutchinson"},
      {"integrator.probes", ValueType::integer, "1", "Rademacher probes per particle (hutchinson)"},
      {"integrator.probe_seed", ValueType::integer, "0", "seed for Hutchinson probes"},
  };
}

std::vector<KeyInfo> concat_keys(std::vector<KeyInfo> a, const std::vector<KeyInfo>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string join_reals(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s + "]";
}

}  // namespace

const std::vector<KeyInfo>& integrator_schema() {
  static const std::vector<KeyInfo> schema = integrator_keys();
  return schema;
}

const std::vector<KeyInfo>& train_schema() {
  static const std::vector<KeyInfo> schema = concat_keys(
      {
          {"dataset", ValueType::string, "\"8gaussians\"", "8gaussians, pinwheel or gaussian1d"},
          {"seed", ValueType::integer, "0", "master seed (data, init, batches)"},
          {"n_train", ValueType::integer, "256", "training points drawn from the dataset"},
          {"n_holdout", ValueType::integer, "2048", "held-out points for evaluation"},
          {"hidden", ValueType::int_array, "[64, 64]", "hidden layer widths of the tanh MLP"},
          {"lambda", ValueType::real, "0.0", "regularizer weight (>= 0)"},
          {"functional", ValueType::string, "\"variance\"", "variance, eif_mean or expectation"},
          {"phi_coeffs", ValueType::string, "\"\"", "expectation polynomial, \"c:e1,e2;c:e1,e2\""},
          {"batch_size", ValueType::integer, "256", "data rows per step"},
          {"prior_batch", ValueType::integer, "256", "prior particles per step for the regularizer"},
          {"epochs", ValueType::integer, "500", "passes over the training data"},
          {"learning_rate", ValueType::real, "0.001", "Adam step size"},
          {"t1", ValueType::real, "1.0", "end time (initial value when learnable)"},
          {"learnable_t1", ValueType::boolean, "false", "learn t1 = softplus(tau)"},
          {"mu_samples", ValueType::integer, "1024", "model samples for the eif_mean center"},
      },
      concat_keys(integrator_keys(), {
                                         {"eval.samples", ValueType::integer, "2048", "model samples for moments"},
                                         {"eval.w2_points", ValueType::integer, "512", "points per side for W2"},
                                     }));
  return schema;
}

const std::vector<KeyInfo>& causal_schema() {
  static const std::vector<KeyInfo> schema = concat_keys(
      {
          {"seed", ValueType::integer, "0", "master seed; replication r uses a derived stream"},
          {"replications", ValueType::integer, "200", "Monte-Carlo replications R"},
          {"t_grid", ValueType::real_array, "[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]",
           "normalized flow times"},
          {"plugin_samples", ValueType::integer, "10000", "prior draws M per plug-in estimate"},
          {"scenario.true_mean", ValueType::real, "0.0", "target mean"},
          {"scenario.bias", ValueType::real, "1.0", "mean shift of the observed data"},
          {"scenario.noise_sd", ValueType::real, "1.0", "observation noise sd"},
          {"scenario.n_obs", ValueType::integer, "50", "observations per replication"},
          {"scenario.prior_mean", ValueType::real, "0.0", "prior N(mu0, 1) mean"},
          {"train.hidden", ValueType::int_array, "[32, 32]", "hidden widths"},
          {"train.epochs", ValueType::integer, "100", "epochs per replication"},
          {"train.learning_rate", ValueType::real, "0.01", "Adam step size"},
          {"train.lambda", ValueType::real, "0.0", "regularizer weight"},
          {"train.functional", ValueType::string, "\"variance\"", "variance, eif_mean or expectation"},
          {"train.phi_coeffs", ValueType::string, "\"\"", "expectation polynomial"},
          {"train.batch_size", ValueType::integer, "0", "rows per step, 0 = all observations"},
          {"train.prior_batch", ValueType::integer, "256", "prior particles for the regularizer"},
          {"train.t1", ValueType::real, "1.0", "end time"},
          {"train.learnable_t1", ValueType::boolean, "false", "learn t1"},
          {"train.mu_samples", ValueType::integer, "1024", "samples for the eif_mean center"},
      },
      integrator_keys());
  return schema;
}

const std::vector<KeyInfo>& eval_schema() {
  static const std::vector<KeyInfo> schema = concat_keys(
      {
          {"seed", ValueType::integer, "0", "seed for model samples"},
          {"functional", ValueType::string, "\"variance\"", "functional for the residual diagnostics"},
          {"phi_coeffs", ValueType::string, "\"\"", "expectation polynomial"},
      },
      concat_keys(integrator_keys(), {
                                         {"eval.samples", ValueType::integer, "2048", "model samples for moments"},
                                         {"eval.w2_points", ValueType::integer, "512", "points per side for W2"},
                                     }));
  return schema;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                   const std::vector<KeyInfo>& schema) {
  Config cfg;
  if (!path.empty()) {
    if (!fs::is_regular_file(path)) throw ConfigError("config file '" + path + "' does not exist");
    cfg = Config::parse(read_file(path), path);
  }
  for (const auto& o : overrides) cfg.apply_override(o);
  cfg.resolve(schema);
  return cfg;
}

IntegratorConfig integrator_from(const Config& cfg) {
  IntegratorConfig ic;
  const std::string method = cfg.get_string("integrator.method");
  if (method == "rk4") {
    ic.method = Method::rk4;
  } else if (method == "euler") {
    ic.method = Method::euler;
  } else {
    throw ConfigError("integrator.method must be \"euler\" or \"rk4\", got \"" + method + "\"");
  }
  ic.steps = static_cast<int>(cfg.get_int("integrator.steps"));
  const std::string div = cfg.get_string("integrator.divergence");
  if (div == "exact") {
    ic.divergence.kind = DivergenceMode::Kind::exact;
  } else if (div == "hutchinson") {
    ic.divergence.kind = DivergenceMode::Kind::hutchinson;
  } else {
    throw ConfigError("integrator.divergence must be \"exact\" or \"hutchinson\", got \"" + div + "\"");
  }
  ic.divergence.probes = static_cast<int>(cfg.get_int("integrator.probes"));
  ic.divergence.seed = static_cast<std::uint64_t>(cfg.get_int("integrator.probe_seed"));
  try {
    ic.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return ic;
}

namespace {

std::vector<Index> widths(const std::vector<long long>& v, const std::string& key) {
  std::vector<Index> out;
  for (long long w : v) {
    if (w < 1) throw ConfigError(key + ": widths must be positive");
    out.push_back(static_cast<Index>(w));
  }
  if (out.empty()) throw ConfigError(key + ": at least one hidden layer required");
  return out;
}

template <typename F>
void as_config_error(F&& f) {
  try {
    f();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

TrainSetup train_setup_from(const Config& cfg) {
  TrainSetup s;
  TrainConfig& t = s.train;
  as_config_error([&] {
    t.dataset = cfg.get_string("dataset");
    t.spec.input_dim = dataset_dim(t.dataset);
    t.spec.hidden = widths(cfg.get_ints("hidden"), "hidden");
    t.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    t.lambda = cfg.get_real("lambda");
    t.functional = parse_functional_kind(cfg.get_string("functional"));
    t.phi = parse_phi_coeffs(cfg.get_string("phi_coeffs"), t.spec.input_dim);
    t.batch_size = static_cast<int>(cfg.get_int("batch_size"));
    t.prior_batch = static_cast<int>(cfg.get_int("prior_batch"));
    t.epochs = static_cast<int>(cfg.get_int("epochs"));
    t.learning_rate = cfg.get_real("learning_rate");
    t.t1 = cfg.get_real("t1");
    t.learnable_t1 = cfg.get_bool("learnable_t1");
    t.mu_samples = static_cast<int>(cfg.get_int("mu_samples"));
    t.integrator = integrator_from(cfg);
    s.n_train = cfg.get_int("n_train");
    s.n_holdout = cfg.get_int("n_holdout");
    s.eval_samples = cfg.get_int("eval.samples");
    s.eval_w2_points = cfg.get_int("eval.w2_points");
    t.validate();
    if (s.n_train < t.batch_size) throw ConfigError("n_train must be at least batch_size");
    if (s.n_holdout < 1) throw ConfigError("n_holdout must be positive");
    if (s.eval_samples < 2 || s.eval_w2_points < 1) throw ConfigError("eval.samples >= 2 and eval.w2_points >= 1");
  });
  return s;
}

CausalConfig causal_config_from(const Config& cfg) {
  CausalConfig c;
  as_config_error([&] {
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    c.replications = static_cast<int>(cfg.get_int("replications"));
    c.t_grid = cfg.get_reals("t_grid");
    c.plugin_samples = cfg.get_int("plugin_samples");
    c.scenario.true_mean = cfg.get_real("scenario.true_mean");
    c.scenario.bias = cfg.get_real("scenario.bias");
    c.scenario.noise_sd = cfg.get_real("scenario.noise_sd");
    c.scenario.n_obs = static_cast<int>(cfg.get_int("scenario.n_obs"));
    c.scenario.prior_mean = cfg.get_real("scenario.prior_mean");
    c.train.spec.hidden = widths(cfg.get_ints("train.hidden"), "train.hidden");
    c.train.epochs = static_cast<int>(cfg.get_int("train.epochs"));
    c.train.learning_rate = cfg.get_real("train.learning_rate");
    c.train.lambda = cfg.get_real("train.lambda");
    c.train.functional = parse_functional_kind(cfg.get_string("train.functional"));
    c.train.phi = parse_phi_coeffs(cfg.get_string("train.phi_coeffs"), 1);
    c.train.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
    c.train.prior_batch = static_cast<int>(cfg.get_int("train.prior_batch"));
    c.train.t1 = cfg.get_real("train.t1");
    c.train.learnable_t1 = cfg.get_bool("train.learnable_t1");
    c.train.mu_samples = static_cast<int>(cfg.get_int("train.mu_samples"));
    c.train.integrator = integrator_from(cfg);
    c.validate();
  });
  return c;
}

Eigen::MatrixXd density_grid(const VelocityField& field, double t1, const std::vector<double>& bounds, int resolution,
                             double t, const IntegratorConfig& cfg, int threads) {
  if (field.dim() != 2) throw ShapeError("density grids need a 2-D model, this one has d = " + std::to_string(field.dim()));
  if (bounds.size() != 4 || !(bounds[1] > bounds[0]) || !(bounds[3] > bounds[2])) {
    throw ContractError("bounds must be xmin,xmax,ymin,ymax with xmin < xmax and ymin < ymax");
  }
  if (resolution < 1 || resolution > 512) throw ContractError("resolution must lie in [1, 512]");
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("t must lie in [0, 1]");
  const double dx = (bounds[1] - bounds[0]) / resolution;
  const double dy = (bounds[3] - bounds[2]) / resolution;
  const Index n = static_cast<Index>(resolution) * resolution;
  Eigen::MatrixXd pts(n, 2);
  for (int iy = 0; iy < resolution; ++iy) {
    for (int ix = 0; ix < resolution; ++ix) {
      pts(static_cast<Index>(iy) * resolution + ix, 0) = bounds[0] + (ix + 0.5) * dx;
      pts(static_cast<Index>(iy) * resolution + ix, 1) = bounds[2] + (iy + 0.5) * dy;
    }
  }
  Eigen::VectorXd logp(n);
  if (t == 0.0) {
    for (Index i = 0; i < n; ++i) logp[i] = standard_normal_logpdf(pts.row(i).transpose());
  } else {
    BatchOptions opts;
    opts.threads = threads;
    logp = log_likelihood_batch(field, pts, 0.0, t * t1, cfg, opts);
  }
  Eigen::MatrixXd out(n, 3);
  out << pts, logp;
  return out;
}

// ---------------------------------------------------------------------------

bool run_self_checks(std::ostream& out) {
  struct Check {
    const char* name;
    std::function<bool()> fn;
  };
  const std::vector<Check> checks = {
      {"reverse gradient of x^2 matches central differences",
       [] {
         ExprGraph g;
         const Expr x = g.leaf("x");
         g.set_output(sum(square(x)));
         Bindings b;
         b.set(x, Tensor::scalar(3.0));
         return finite_diff_check(g, b, x, 1e-5) < 1e-6;
       }},
      {"MLP loss gradient matches central differences",
       [] {
         MlpSpec spec{2, {16, 16}};
         const MlpField field(init_params(spec, 3));
         FieldGraph fg = build_field_graph(field);
         const Expr loss = mean(square(fg.out));
         fg.graph->set_output(loss);
         Rng rng(5);
         const RowMatrix z = rng.normal_matrix(4, 2);
         const Bindings b = fg.bind(field, z, 0.3);
         for (const Expr& p : fg.params) {
           if (finite_diff_check(*fg.graph, b, p, 1e-5) > 1e-4) return false;
         }
         return true;
       }},
      {"contraction field log-density matches the Gaussian oracle",
       [] {
         const AffineField f = AffineField::negative_identity(2);
         const Eigen::Vector2d x(0.3, -0.7);
         const double ll = log_likelihood(f, x, 0.0, 1.0, IntegratorConfig{});
         const double exact = -std::log(2.0 * std::numbers::pi) + 2.0 - 0.5 * std::exp(2.0) * x.squaredNorm();
         return std::abs(ll - exact) < 1e-4;
       }},
      {"gradient-flow fields have zero residuals",
       [] {
         const auto var = FunctionalDescriptor::second_moment_half(2);
         const AffineField f = AffineField::negative_identity(2);
         const Eigen::Vector2d z(1.5, -0.25);
         return residual_velocity(f, var, z, 0.0) <= 1e-12 && residual_logdensity(f, var, z, 0.0) <= 1e-12;
       }},
      {"Hungarian W2 equals brute force",
       [] {
         Rng rng(7);
         for (int trial = 0; trial < 20; ++trial) {
           const Index n = 1 + static_cast<Index>(rng.index(6));
           const Eigen::MatrixXd a = rng.normal_matrix(n, 2), b = rng.normal_matrix(n, 2);
           if (std::abs(empirical_w2(a, b) - brute_force_w2(a, b)) > 1e-12) return false;
         }
         return true;
       }},
      {"CRLB bound holds",
       [] {
         Rng rng(9);
         for (int trial = 0; trial < 100; ++trial) {
           const Eigen::VectorXd phi = rng.normal_matrix(64, 1).col(0), g = rng.normal_matrix(64, 1).col(0);
           if (!crlb_check(phi, g).holds) return false;
         }
         return true;
       }},
      {"Hutchinson is exact on diagonal Jacobians",
       [] {
         Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
         a(0, 0) = 1.0;
         a(1, 1) = 2.0;
         const AffineField f(a, Eigen::VectorXd::Zero(2));
         return divergence_hutchinson(f, Eigen::Vector2d(0.4, 1.1), 0.0, 3, 11) == 3.0;
       }},
      {"forward then inverse integration is the identity",
       [] {
         const MlpField f(init_params(MlpSpec{2, {16, 16}}, 13));
         const Eigen::Vector2d z0(0.5, -1.0);
         const IntegratorConfig cfg;
         const FlowState s = integrate_forward(f, z0, 0.0, 0.0, 1.0, std::nullopt, cfg);
         return (integrate_inverse(f, s.z, 1.0, 0.0, cfg) - z0).cwiseAbs().maxCoeff() < 1e-5;
       }},
  };
  bool all = true;
  for (const auto& c : checks) {
    bool ok = false;
    try {
      ok = c.fn();
    } catch (const std::exception& e) {
      out << "  error: " << e.what() << "\n";
    }
    out << (ok ? "PASS " : "FAIL ") << c.name << "\n";
    all = all && ok;
  }
  return all;
}

// ---------------------------------------------------------------------------

namespace {

std::string metrics_csv(const std::vector<EpochRecord>& log) {
  std::string s = "epoch,nll,reg,total,t1,seconds\n";
  for (const auto& r : log) {
    s += std::to_string(r.epoch) + "," + format_double(r.nll) + "," + format_double(r.reg) + "," +
         format_double(r.total) + "," + format_double(r.t1) + "," + format_double(r.seconds) + "\n";
  }
  return s;
}

std::string report_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["nll"] = rep.nll;
  for (Index i = 0; i < rep.sample_mean.size(); ++i) j["sample_mean_" + std::to_string(i + 1)] = rep.sample_mean[i];
  for (Index i = 0; i < rep.sample_var.size(); ++i) j["sample_var_" + std::to_string(i + 1)] = rep.sample_var[i];
  j["residual_velocity"] = rep.residual_velocity;
  j["residual_logdensity"] = rep.residual_logdensity;
  j["w2"] = rep.w2;
  return j.dump(2) + "\n";
}

Eigen::MatrixXd read_points(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.values.rows() == 0) throw IoError("'" + path + "' holds no rows");
  return t.values;
}

FunctionalDescriptor eval_functional(const Config& cfg, Index d, const Eigen::MatrixXd& data) {
  FunctionalDescriptor desc;
  as_config_error([&] {
    switch (parse_functional_kind(cfg.get_string("functional"))) {
      case FunctionalKind::second_moment_half: desc = FunctionalDescriptor::second_moment_half(d); break;
      case FunctionalKind::eif_variance_mean:
        desc = FunctionalDescriptor::eif_variance_mean(data.colwise().mean().transpose());
        break;
      case FunctionalKind::expectation:
        desc = FunctionalDescriptor::expectation(d, parse_phi_coeffs(cfg.get_string("phi_coeffs"), d));
        break;
    }
  });
  return desc;
}

int cmd_train(const CliConfig& cli, std::ostream& out) {
  Config cfg = load_config(cli.config_path, cli.overrides, train_schema());
  if (cli.seed) cfg.apply_override("seed=" + std::to_string(*cli.seed));
  cfg.resolve(train_schema());
  TrainSetup setup = train_setup_from(cfg);
  setup.train.threads = cli.threads;
  const TrainConfig& tc = setup.train;

  const fs::path dir(cli.out_dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "config.resolved.toml", cfg.dump(train_schema()));

  const Eigen::MatrixXd data = sample_dataset(tc.dataset, setup.n_train, derive_seed(tc.seed, 100));
  const Eigen::MatrixXd holdout = sample_dataset(tc.dataset, setup.n_holdout, derive_seed(tc.seed, 101));
  const auto header = coordinate_header(data.cols());
  write_file_atomic(dir / "train_data.csv", format_csv(header, data));
  write_file_atomic(dir / "holdout.csv", format_csv(header, holdout));

  out << "training " << tc.dataset << ": " << setup.n_train << " points, " << tc.epochs << " epochs\n";
  const RunArtifacts art = train(tc, data, [&](const EpochRecord& r, const FieldParams&, double) {
    if (r.epoch == 1 || r.epoch % 50 == 0 || r.epoch == tc.epochs) {
      out << "epoch " << r.epoch << " nll " << r.nll << " reg " << r.reg << " total " << r.total << "\n";
    }
  });
  save_checkpoint(dir / "initial.ckpt", Checkpoint{art.initial, 0.0, tc.t1});
  save_checkpoint(dir / "model.ckpt", Checkpoint{art.params, 0.0, art.t1});
  write_file_atomic(dir / "metrics.csv", metrics_csv(art.log));
  if (art.aborted) {
    throw NumericError("training aborted (" + art.abort_reason + "); last good parameters kept in model.ckpt");
  }

  EvalConfig ec;
  ec.t1 = art.t1;
  ec.integrator = tc.integrator;
  ec.functional = eval_functional(cfg, tc.spec.input_dim, holdout);
  ec.seed = tc.seed;
  ec.samples = setup.eval_samples;
  ec.w2_points = setup.eval_w2_points;
  ec.threads = cli.threads;
  const EvalReport rep = eval_suite(MlpField(art.params), holdout, ec);
  write_file_atomic(dir / "report.json", report_json(rep));
  out << "held-out nll " << rep.nll << ", w2 " << rep.w2 << "\n";
  return kExitOk;
}

int cmd_sample(const CliConfig& cli) {
  if (cli.ckpt.empty() || cli.out.empty()) throw ConfigError("sample needs --ckpt and --out");
  const Config cfg = load_config(cli.config_path, cli.overrides, integrator_schema());
  const IntegratorConfig ic = integrator_from(cfg);
  const Checkpoint ck = load_checkpoint(cli.ckpt);
  const MlpField field(ck.params);
  if (cli.n < 0) throw ConfigError("--n must be non-negative");
  if (!(cli.t >= 0.0 && cli.t <= 1.0)) throw ConfigError("--t must lie in [0, 1]");
  Rng rng(cli.seed.value_or(0));
  const Eigen::MatrixXd z0 = rng.normal_matrix(cli.n, field.dim());
  const double t_end = ck.t0 + cli.t * (ck.t1 - ck.t0);
  BatchOptions opts;
  opts.threads = cli.threads;
  Eigen::MatrixXd z = z0;
  if (!cli.trajectory.empty()) {
    if (cli.t == 0.0) throw ConfigError("a trajectory dump needs --t > 0");
    Eigen::VectorXd logp0(z0.rows());
    for (Index i = 0; i < z0.rows(); ++i) logp0[i] = standard_normal_logpdf(z0.row(i).transpose());
    Trajectory traj;
    opts.trajectory = &traj;
    z = integrate_forward_batch(field, z0, logp0, ck.t0, t_end, std::nullopt, ic, opts).z;
    std::vector<std::string> header{"t", "particle_id"};
    for (const auto& h : coordinate_header(field.dim())) header.push_back(h);
    header.push_back("logp");
    Eigen::MatrixXd rows(static_cast<Index>(traj.t.size()) * z0.rows(), 3 + field.dim());
    Index r = 0;
    for (std::size_t k = 0; k < traj.t.size(); ++k) {
      for (Index i = 0; i < z0.rows(); ++i, ++r) {
        rows(r, 0) = traj.t[k];
        rows(r, 1) = static_cast<double>(i);
        rows.block(r, 2, 1, field.dim()) = traj.z[k].row(i);
        rows(r, 2 + field.dim()) = traj.logp[k][i];
      }
    }
    write_file_atomic(cli.trajectory, format_csv(header, rows));
  } else if (cli.t > 0.0) {
    z = push_forward_batch(field, z0, ck.t0, t_end, ic, opts);
  }
  write_file_atomic(cli.out, format_csv(coordinate_header(field.dim()), z));
  return kExitOk;
}

int cmd_sample_data(const CliConfig& cli) {
  if (cli.out.empty()) throw ConfigError("sample-data needs --out");
  if (cli.n < 0) throw ConfigError("--n must be non-negative");
  Eigen::MatrixXd data;
  as_config_error([&] { data = sample_dataset(cli.name, cli.n, cli.seed.value_or(0)); });
  write_file_atomic(cli.out, format_csv(coordinate_header(data.cols()), data));
  return kExitOk;
}

int cmd_density_grid(const CliConfig& cli) {
  if (cli.ckpt.empty() || cli.out.empty()) throw ConfigError("density-grid needs --ckpt and --out");
  const Config cfg = load_config(cli.config_path, cli.overrides, integrator_schema());
  const IntegratorConfig ic = integrator_from(cfg);
  const Checkpoint ck = load_checkpoint(cli.ckpt);
  const MlpField field(ck.params);
  Eigen::MatrixXd grid;
  as_config_error([&] { grid = density_grid(field, ck.t1, cli.bounds, cli.resolution, cli.t, ic, cli.threads); });
  write_file_atomic(cli.out, format_csv({"x", "y", "logp"}, grid));
  return kExitOk;
}

int cmd_eval(const CliConfig& cli, std::ostream& out) {
  if (cli.ckpt.empty() || cli.data.empty() || cli.out.empty()) throw ConfigError("eval needs --ckpt, --data and --out");
  Config cfg = load_config(cli.config_path, cli.overrides, eval_schema());
  if (cli.seed) cfg.apply_override("seed=" + std::to_string(*cli.seed));
  cfg.resolve(eval_schema());
  const Checkpoint ck = load_checkpoint(cli.ckpt);
  const MlpField field(ck.params);
  const Eigen::MatrixXd holdout = read_points(cli.data);
  if (holdout.cols() != field.dim()) throw ConfigError("data has " + std::to_string(holdout.cols()) + " columns, model expects " + std::to_string(field.dim()));
  EvalConfig ec;
  ec.t1 = ck.t1;
  ec.integrator = integrator_from(cfg);
  ec.functional = eval_functional(cfg, field.dim(), holdout);
  ec.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  ec.samples = cfg.get_int("eval.samples");
  ec.w2_points = cfg.get_int("eval.w2_points");
  ec.threads = cli.threads;
  const EvalReport rep = eval_suite(field, holdout, ec);
  write_file_atomic(cli.out, report_json(rep));
  out << "nll " << rep.nll << ", w2 " << rep.w2 << "\n";
  return kExitOk;
}

int cmd_causal(const CliConfig& cli, std::ostream& out) {
  if (cli.out.empty()) throw ConfigError("causal-sim needs --out");
  Config cfg = load_config(cli.config_path, cli.overrides, causal_schema());
  if (cli.seed) cfg.apply_override("seed=" + std::to_string(*cli.seed));
  cfg.resolve(causal_schema());
  const CausalConfig cc = causal_config_from(cfg);
  const fs::path out_path(cli.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  fs::path echo = out_path;
  echo.replace_extension(".config.toml");
  write_file_atomic(echo, cfg.dump(causal_schema()));
  const RmseTable table = rmse_experiment(cc, cli.threads, [&](int r, bool ok) {
    if (!ok) out << "replication " << r << " failed\n";
  });
  write_file_atomic(out_path, format_rmse_csv(table));
  out << table.replications << " replications (" << table.failures << " failed); tmle rmse " << table.tmle.rmse
      << ", t grid " << join_reals(table.t_grid) << "\n";
  return kExitOk;
}

}  // namespace

int run(const CliConfig& cli, std::ostream& out, std::ostream& err) {
  try {
    if (cli.threads < 1) throw ConfigError("--threads must be at least 1");
    if (cli.command == "train") return cmd_train(cli, out);
    if (cli.command == "sample") return cmd_sample(cli);
    if (cli.command == "sample-data") return cmd_sample_data(cli);
    if (cli.command == "density-grid") return cmd_density_grid(cli);
    if (cli.command == "eval") return cmd_eval(cli, out);
    if (cli.command == "causal-sim") return cmd_causal(cli, out);
    if (cli.command == "check") return run_self_checks(out) ? kExitOk : kExitNumeric;
    err << "unknown command '" << cli.command << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
}

int cli_main(int argc, char** argv) {
  CLI::App app{"nwflow: continuous normalizing flows with a gradient-flow regularizer"};
  app.require_subcommand(1);
  CliConfig cli;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string bounds_text;

  auto common = [&](CLI::App* sub, bool with_config) {
    sub->add_option("--threads", threads, "worker threads (default: NWFLOW_THREADS or 1)");
    if (with_config) {
      sub->add_option("--config", cli.config_path, "TOML-subset config file");
      sub->add_option("--set", cli.overrides, "override key=value (repeatable)");
    }
  };
  auto with_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "seed"); };
  auto footer = [](CLI::App* sub, const std::vector<KeyInfo>& schema) { sub->footer(describe_schema(schema)); };

  CLI::App* train_cmd = app.add_subcommand("train", "train a flow and write model.ckpt, metrics.csv, ...");
  common(train_cmd, true);
  with_seed(train_cmd);
  train_cmd->add_option("--out-dir", cli.out_dir, "output directory")->capture_default_str();
  footer(train_cmd, train_schema());

  CLI::App* sample_cmd = app.add_subcommand("sample", "draw samples from a checkpoint");
  common(sample_cmd, true);
  with_seed(sample_cmd);
  sample_cmd->add_option("--ckpt", cli.ckpt, "checkpoint")->required();
  sample_cmd->add_option("--n", cli.n, "number of samples")->capture_default_str();
  sample_cmd->add_option("--t", cli.t, "normalized flow time in [0, 1]")->capture_default_str();
  sample_cmd->add_option("--out", cli.out, "CSV output")->required();
  sample_cmd->add_option("--trajectory", cli.trajectory, "also dump t,particle_id,z...,logp at every step");
  footer(sample_cmd, integrator_schema());

  CLI::App* data_cmd = app.add_subcommand("sample-data", "write a toy dataset as CSV");
  common(data_cmd, false);
  with_seed(data_cmd);
  data_cmd->add_option("--name", cli.name, "8gaussians, pinwheel or gaussian1d")->capture_default_str();
  data_cmd->add_option("--n", cli.n, "number of points")->capture_default_str();
  data_cmd->add_option("--out", cli.out, "CSV output")->required();

  CLI::App* grid_cmd = app.add_subcommand("density-grid", "model log-density on a 2-D grid");
  common(grid_cmd, true);
  grid_cmd->add_option("--ckpt", cli.ckpt, "checkpoint")->required();
  grid_cmd->add_option("--bounds", bounds_text, "xmin,xmax,ymin,ymax (default -4,4,-4,4)");
  grid_cmd->add_option("--resolution", cli.resolution, "cells per axis (<= 512)")->capture_default_str();
  grid_cmd->add_option("--t", cli.t, "normalized flow time in [0, 1]")->capture_default_str();
  grid_cmd->add_option("--out", cli.out, "CSV output")->required();
  footer(grid_cmd, integrator_schema());

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against held-out data");
  common(eval_cmd, true);
  with_seed(eval_cmd);
  eval_cmd->add_option("--ckpt", cli.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", cli.data, "held-out CSV")->required();
  eval_cmd->add_option("--out", cli.out, "JSON report")->required();
  footer(eval_cmd, eval_schema());

  CLI::App* causal_cmd = app.add_subcommand("causal-sim", "RMSE of flow-time plug-in estimates vs the TMLE baseline");
  common(causal_cmd, true);
  with_seed(causal_cmd);
  causal_cmd->add_option("--out", cli.out, "rmse.csv")->required();
  footer(causal_cmd, causal_schema());

  CLI::App* check_cmd = app.add_subcommand("check", "run the invariant self-checks");
  common(check_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    cli.command = sub->get_name();
    if (const auto* o = sub->get_option_no_throw("--seed"); o && o->count()) cli.seed = seed;
    if (sub->count("--threads")) {
      cli.threads = threads;
    } else if (const char* env = std::getenv("NWFLOW_THREADS")) {
      try {
        cli.threads = std::stoi(env);
      } catch (const std::exception&) {
        std::cerr << "config error: NWFLOW_THREADS must be an integer\n";
        return kExitConfig;
      }
    }
  }
  if (!bounds_text.empty()) {
    cli.bounds.clear();
    std::stringstream ss(bounds_text);
    std::string item;
    try {
      while (std::getline(ss, item, ',')) cli.bounds.push_back(std::stod(item));
    } catch (const std::exception&) {
      std::cerr << "usage error: --bounds expects four numbers\n";
      return kExitUsage;
    }
  }
  return run(cli, std::cout, std::cerr);
}

}  // namespace nwflow
