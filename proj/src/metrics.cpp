#include "nwflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nwflow/rng.hpp"

namespace nwflow {

std::vector<Index> hungarian_assignment(const Eigen::Ref<const Eigen::MatrixXd>& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ShapeError("assignment needs a square cost matrix");
  if (!cost.allFinite()) throw NumericError("assignment cost matrix has non-finite entries");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j, way[] the augmenting path.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assign(n);
  for (Index j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

Eigen::MatrixXd squared_distance_matrix(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                        const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.cols() != b.cols()) throw ShapeError("point sets have different dimensions");
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  return c;
}

namespace {

void check_sets(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.rows() != b.rows()) {
    throw ContractError("empirical W2 needs equal-size sets (got " + std::to_string(a.rows()) + " and " +
                        std::to_string(b.rows()) + ")");
  }
  if (a.rows() < 1) throw ContractError("empirical W2 needs at least one point");
  if (a.cols() != b.cols()) throw ShapeError("point sets have different dimensions");
  if (!a.allFinite() || !b.allFinite()) throw NumericError("point sets must be finite");
}

}  // namespace

double empirical_w2(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b) {
  check_sets(a, b);
  const Eigen::MatrixXd c = squared_distance_matrix(a, b);
  const auto assign = hungarian_assignment(c);
  // Summing the matched costs in sorted order makes the result exactly
  // symmetric in (a, b).
  std::vector<double> matched(static_cast<std::size_t>(c.rows()));
  for (Index i = 0; i < c.rows(); ++i) matched[static_cast<std::size_t>(i)] = c(i, assign[i]);
  std::sort(matched.begin(), matched.end());
  double total = 0.0;
  for (double m : matched) total += m;
  return std::sqrt(total / static_cast<double>(a.rows()));
}

double brute_force_w2(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b) {
  check_sets(a, b);
  if (a.rows() > 8) throw ContractError("brute-force W2 is limited to 8 points");
  const Eigen::MatrixXd c = squared_distance_matrix(a, b);
  std::vector<Index> perm(a.rows());
  std::iota(perm.begin(), perm.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index i = 0; i < c.rows(); ++i) total += c(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.rows()));
}

CrlbReport crlb_check(const Eigen::Ref<const Eigen::VectorXd>& phi, const Eigen::Ref<const Eigen::VectorXd>& g) {
  const Index m = phi.size();
  if (g.size() != m) throw ShapeError("phi and g need the same number of samples");
  if (m < 2) throw ContractError("CRLB check needs at least two samples");
  const Eigen::VectorXd gc = g.array() - g.mean();
  const double gg = gc.squaredNorm() / static_cast<double>(m);
  if (!(gg > 0.0)) throw ContractError("score samples have zero variance");
  const double pg = phi.dot(gc) / static_cast<double>(m);
  CrlbReport r;
  r.bound = pg * pg / gg;
  r.eif_second_moment = phi.squaredNorm() / static_cast<double>(m);
  r.gap = r.eif_second_moment - r.bound;
  r.holds = r.gap >= -1e-9;
  return r;
}

EvalReport eval_suite(const VelocityField& field, const Eigen::Ref<const Eigen::MatrixXd>& holdout,
                      const EvalConfig& cfg) {
  if (holdout.rows() < 1) throw ContractError("evaluation needs held-out points");
  if (holdout.cols() != field.dim()) throw ShapeError("holdout dimension does not match the field");
  BatchOptions opts;
  opts.threads = cfg.threads;
  EvalReport rep;
  rep.nll = -log_likelihood_batch(field, holdout, 0.0, cfg.t1, cfg.integrator, opts).mean();

  Rng rng(derive_seed(cfg.seed, 11));
  const Eigen::MatrixXd z0 = rng.normal_matrix(cfg.samples, field.dim());
  const Eigen::MatrixXd samples = push_forward_batch(field, z0, 0.0, cfg.t1, cfg.integrator, opts);
  rep.sample_mean = samples.colwise().mean().transpose();
  rep.sample_var = (samples.rowwise() - rep.sample_mean.transpose()).colwise().squaredNorm().transpose() /
                   static_cast<double>(std::max<Index>(1, samples.rows() - 1));

  // Residuals at evenly spaced times along the sampled trajectories.
  const Index n_res = std::min<Index>(cfg.w2_points, samples.rows());
  Trajectory traj;
  opts.trajectory = &traj;
  push_forward_batch(field, z0.topRows(n_res), 0.0, cfg.t1, cfg.integrator, opts);
  const int times = std::max(2, cfg.residual_times);
  double rv = 0.0, rl = 0.0;
  for (int k = 0; k < times; ++k) {
    const auto step = static_cast<std::size_t>(std::lround(static_cast<double>(k) * cfg.integrator.steps / (times - 1)));
    rv += residual_velocity_batch(field, cfg.functional, traj.z[step], traj.t[step]).mean();
    rl += residual_logdensity_batch(field, cfg.functional, traj.z[step], traj.t[step]).mean();
  }
  rep.residual_velocity = rv / times;
  rep.residual_logdensity = rl / times;

  const Index n_w2 = std::min<Index>(cfg.w2_points, std::min(holdout.rows(), samples.rows()));
  rep.w2 = empirical_w2(samples.topRows(n_w2), holdout.topRows(n_w2));
  return rep;
}

}  // namespace nwflow
