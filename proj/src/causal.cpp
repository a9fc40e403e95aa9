#include "nwflow/causal.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "nwflow/io.hpp"
#include "nwflow/rng.hpp"

namespace nwflow {

namespace {

int grid_step(double t, int steps) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("interpolation time must lie in [0, 1]");
  const double k = t * steps;
  const double rk = std::round(k);
  if (std::abs(k - rk) > 1e-9) {
    throw ContractError("t = " + format_double(t) + " is not on the " + std::to_string(steps) + "-step grid");
  }
  return static_cast<int>(rk);
}

Eigen::MatrixXd centered_draws(const PriorSampler& prior, Index samples, std::uint64_t seed) {
  if (samples < 1) throw ContractError("plug-in estimate needs at least one sample");
  return prior.draw(samples, seed).array() - prior.mean();
}

}  // namespace

double plugin_psi_at_t(const VelocityField& field, const PriorSampler& prior, double t, double t1, Index samples,
                       std::uint64_t seed, const IntegratorConfig& cfg) {
  cfg.validate();
  const int k = grid_step(t, cfg.steps);
  Eigen::MatrixXd u = centered_draws(prior, samples, seed);
  if (k > 0) {
    IntegratorConfig partial = cfg;
    partial.steps = k;
    u = push_forward_batch(field, u, 0.0, t1 * k / cfg.steps, partial);
  }
  return u.col(0).mean() + prior.mean();
}

Eigen::VectorXd plugin_curve(const VelocityField& field, const PriorSampler& prior, const std::vector<double>& t_grid,
                             double t1, Index samples, std::uint64_t seed, const IntegratorConfig& cfg, int threads) {
  cfg.validate();
  std::vector<int> ks;
  for (double t : t_grid) ks.push_back(grid_step(t, cfg.steps));
  const Eigen::MatrixXd u0 = centered_draws(prior, samples, seed);
  Trajectory traj;
  BatchOptions opts;
  opts.threads = threads;
  opts.trajectory = &traj;
  push_forward_batch(field, u0, 0.0, t1, cfg, opts);
  Eigen::VectorXd out(static_cast<Index>(t_grid.size()));
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out[static_cast<Index>(i)] = traj.z[static_cast<std::size_t>(ks[i])].col(0).mean() + prior.mean();
  }
  return out;
}

double tmle_baseline(const Eigen::Ref<const Eigen::VectorXd>& observed) {
  if (observed.size() < 1) throw ContractError("TMLE baseline needs at least one observation");
  // Initial fit psi0 = 0, fluctuation psi0 + eps with eps solving mean(X - psi0 - eps) = 0.
  const double psi0 = 0.0;
  const double eps = (observed.array() - psi0).mean();
  return psi0 + eps;
}

CausalConfig::CausalConfig() {
  train.dataset = "scenario";
  train.spec.input_dim = 1;
  train.spec.hidden = {32, 32};
  train.epochs = 100;
  train.batch_size = 0;
  train.prior_batch = 256;
  train.learning_rate = 1e-2;
}

void CausalConfig::validate() const {
  scenario.validate();
  if (replications < 2) throw ContractError("causal simulation needs at least two replications");
  if (t_grid.empty()) throw ContractError("t_grid must not be empty");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] >= 0.0 && t_grid[i] <= 1.0)) throw ContractError("t_grid values must lie in [0, 1]");
    if (i && !(t_grid[i] > t_grid[i - 1])) throw ContractError("t_grid must be strictly increasing");
    grid_step(t_grid[i], train.integrator.steps);
  }
  if (plugin_samples < 1) throw ContractError("plugin_samples must be at least 1");
  if (train.spec.input_dim != 1) throw ContractError("the causal scenario is one-dimensional");
  if (train.batch_size < 0 || train.batch_size > scenario.n_obs) {
    throw ContractError("batch_size must lie in [0, n_obs] (0 is the full sample)");
  }
  TrainConfig t = train;
  if (t.batch_size == 0) t.batch_size = 1;
  t.validate();
}

RmseRow summarize_estimates(const Eigen::Ref<const Eigen::VectorXd>& estimates, double truth, std::string label) {
  const Index r = estimates.size();
  if (r < 1) throw ContractError("no estimates to summarize");
  RmseRow row;
  row.label = std::move(label);
  const double mean = estimates.mean();
  row.bias = mean - truth;
  row.variance = (estimates.array() - mean).square().mean();
  const Eigen::ArrayXd sq = (estimates.array() - truth).square();
  row.rmse = std::sqrt(sq.mean());
  if (r > 1 && row.rmse > 0.0) {
    const double sd_sq = std::sqrt((sq - sq.mean()).square().sum() / static_cast<double>(r - 1));
    row.se = sd_sq / (2.0 * row.rmse * std::sqrt(static_cast<double>(r)));
  }
  return row;
}

RmseTable rmse_experiment(const CausalConfig& cfg, int threads, const ReplicationCallback& progress) {
  cfg.validate();
  const int R = cfg.replications;
  const std::size_t T = cfg.t_grid.size();
  std::vector<Eigen::VectorXd> curves(static_cast<std::size_t>(R));
  std::vector<double> tmle(static_cast<std::size_t>(R), 0.0);
  std::vector<char> ok(static_cast<std::size_t>(R), 0);

  auto replicate = [&](int r) {
    const std::uint64_t seed_r = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    const ScenarioDraw draw = sample_scenario(cfg.scenario, derive_seed(seed_r, 0));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed_r, 1);
    tc.threads = 1;
    if (tc.batch_size == 0) tc.batch_size = cfg.scenario.n_obs;
    const Eigen::MatrixXd shifted = draw.observed.array() - draw.prior.mean();
    tmle[static_cast<std::size_t>(r)] = tmle_baseline(draw.observed.col(0));
    try {
      const RunArtifacts art = train(tc, shifted);
      if (art.aborted) return false;
      const MlpField field(art.params);
      Eigen::VectorXd curve = plugin_curve(field, draw.prior, cfg.t_grid, art.t1, cfg.plugin_samples,
                                           derive_seed(seed_r, 2), tc.integrator);
      if (!curve.allFinite()) return false;
      curves[static_cast<std::size_t>(r)] = std::move(curve);
      return true;
    } catch (const NumericError&) {
      return false;
    }
  };

  std::mutex progress_mu;
  auto run_one = [&](int r) {
    const bool success = replicate(r);
    ok[static_cast<std::size_t>(r)] = success ? 1 : 0;
    if (progress) {
      std::lock_guard lock(progress_mu);
      progress(r, success);
    }
  };

  const int workers = std::max(1, std::min(threads, R));
  if (workers == 1) {
    for (int r = 0; r < R; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr error;
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (int r = next++; r < R; r = next++) {
            try {
              run_one(r);
            } catch (...) {
              std::lock_guard lock(err_mu);
              if (!error) error = std::current_exception();
            }
          }
        });
      }
    }
    if (error) std::rethrow_exception(error);
  }

  RmseTable table;
  table.t_grid = cfg.t_grid;
  for (int r = 0; r < R; ++r) table.replications += ok[static_cast<std::size_t>(r)];
  table.failures = R - table.replications;
  if (table.replications < 1) throw NumericError("every replication failed to train");
  table.estimates.resize(table.replications, static_cast<Index>(T));
  table.tmle_estimates.resize(table.replications);
  Index row = 0;
  for (int r = 0; r < R; ++r) {
    if (!ok[static_cast<std::size_t>(r)]) continue;
    table.estimates.row(row) = curves[static_cast<std::size_t>(r)].transpose();
    table.tmle_estimates[row] = tmle[static_cast<std::size_t>(r)];
    ++row;
  }
  const double truth = cfg.scenario.true_mean;
  for (std::size_t j = 0; j < T; ++j) {
    table.rows.push_back(summarize_estimates(table.estimates.col(static_cast<Index>(j)), truth,
                                             format_double(cfg.t_grid[j])));
  }
  table.tmle = summarize_estimates(table.tmle_estimates, truth, "tmle");
  return table;
}

std::string format_rmse_csv(const RmseTable& table) {
  std::string out = "t,bias,variance,rmse\n";
  auto line = [&](const RmseRow& r) {
    out += r.label + "," + format_double(r.bias) + "," + format_double(r.variance) + "," + format_double(r.rmse) + "\n";
  };
  for (const auto& r : table.rows) line(r);
  line(table.tmle);
  return out;
}

}  // namespace nwflow
