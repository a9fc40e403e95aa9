#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nwflow/field.hpp"
#include "nwflow/graph.hpp"

namespace nwflow {

enum class FunctionalKind {
  second_moment_half,  // F(p) = 1/2 E|z|^2
  eif_variance_mean,   // F(p) = Var_p(X), summed over coordinates; EIF of the mean is X - E X
  expectation,         // F(p) = E_p phi(X), phi a polynomial
};

/// One term c * prod_j z_j^powers[j] of a polynomial.
struct Monomial {
  double coeff = 0.0;
  std::vector<int> powers;
};

inline constexpr int kMaxPolynomialDegree = 4;

struct FunctionalDescriptor {
  FunctionalKind kind = FunctionalKind::second_moment_half;
  Index dim = 1;
  Eigen::VectorXd center;       // eif_variance_mean only: the frozen mean estimate
  std::vector<Monomial> phi;    // expectation only

  static FunctionalDescriptor second_moment_half(Index d);
  static FunctionalDescriptor eif_variance_mean(Eigen::VectorXd center);
  static FunctionalDescriptor expectation(Index d, std::vector<Monomial> phi);

  void validate() const;
};

std::string_view functional_config_name(FunctionalKind kind);
FunctionalKind parse_functional_kind(std::string_view name);

/// Parses "c:e1,e2;c:e1,e2" into monomials of dimension d, e.g. "1:2,0;1:0,2"
/// is z1^2 + z2^2.
std::vector<Monomial> parse_phi_coeffs(std::string_view text, Index d);
std::string format_phi_coeffs(const std::vector<Monomial>& phi);

namespace detail {

template <typename Scalar, typename Derived>
Scalar monomial_value(const Monomial& m, const Eigen::MatrixBase<Derived>& z) {
  Scalar v = Scalar(m.coeff);
  for (Index j = 0; j < z.size(); ++j) {
    for (int k = 0; k < m.powers[j]; ++k) v *= z[j];
  }
  return v;
}

inline void check_point(const FunctionalDescriptor& desc, Index size) {
  if (size != desc.dim) {
    throw ShapeError("point has dimension " + std::to_string(size) + ", functional expects " +
                     std::to_string(desc.dim));
  }
}

}  // namespace detail

/// delta F / delta p evaluated at z (up to the additive constant that does not
/// affect its gradient).
template <typename Derived>
typename Derived::Scalar first_variation(const FunctionalDescriptor& desc, const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  detail::check_point(desc, z.size());
  switch (desc.kind) {
    case FunctionalKind::second_moment_half: return Scalar(0.5) * z.squaredNorm();
    case FunctionalKind::eif_variance_mean: return (z - desc.center.template cast<Scalar>()).squaredNorm();
    case FunctionalKind::expectation: {
      Scalar total(0);
      for (const auto& m : desc.phi) total += detail::monomial_value<Scalar>(m, z);
      return total;
    }
  }
  throw ContractError("unsupported functional kind");
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> first_variation_gradient(
    const FunctionalDescriptor& desc, const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  detail::check_point(desc, z.size());
  switch (desc.kind) {
    case FunctionalKind::second_moment_half: return z;
    case FunctionalKind::eif_variance_mean: return Scalar(2) * (z - desc.center.template cast<Scalar>());
    case FunctionalKind::expectation: {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(z.size());
      for (const auto& m : desc.phi) {
        for (Index k = 0; k < z.size(); ++k) {
          if (m.powers[k] == 0) continue;
          Monomial dm = m;
          dm.coeff *= m.powers[k];
          dm.powers[k] -= 1;
          g[k] += detail::monomial_value<Scalar>(dm, z);
        }
      }
      return g;
    }
  }
  throw ContractError("unsupported functional kind");
}

template <typename Derived>
typename Derived::Scalar laplacian_first_variation(const FunctionalDescriptor& desc,
                                                    const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  detail::check_point(desc, z.size());
  switch (desc.kind) {
    case FunctionalKind::second_moment_half: return Scalar(desc.dim);
    case FunctionalKind::eif_variance_mean: return Scalar(2 * desc.dim);
    case FunctionalKind::expectation: {
      Scalar total(0);
      for (const auto& m : desc.phi) {
        for (Index k = 0; k < z.size(); ++k) {
          if (m.powers[k] < 2) continue;
          Monomial dm = m;
          dm.coeff *= m.powers[k] * (m.powers[k] - 1);
          dm.powers[k] -= 2;
          total += detail::monomial_value<Scalar>(dm, z);
        }
      }
      return total;
    }
  }
  throw ContractError("unsupported functional kind");
}

/// F evaluated on a discrete distribution: atoms are rows, weights sum to one.
double functional_value(const FunctionalDescriptor& desc, const Eigen::Ref<const Eigen::VectorXd>& weights,
                        const Eigen::Ref<const Eigen::MatrixXd>& atoms);

/// |f(z, t) + grad(delta F / delta p)(z)|^2.
double residual_velocity(const VelocityField& field, const FunctionalDescriptor& desc,
                         const Eigen::Ref<const Eigen::VectorXd>& z, double t);

/// (-div f(z, t) - laplacian(delta F / delta p)(z))^2: the log-density rate
/// along a trajectory compared with the one the gradient flow prescribes.
double residual_logdensity(const VelocityField& field, const FunctionalDescriptor& desc,
                           const Eigen::Ref<const Eigen::VectorXd>& z, double t);

/// Batched residuals, one per row of z.
Eigen::VectorXd residual_velocity_batch(const VelocityField& field, const FunctionalDescriptor& desc,
                                        const Eigen::Ref<const Eigen::MatrixXd>& z, double t);
Eigen::VectorXd residual_logdensity_batch(const VelocityField& field, const FunctionalDescriptor& desc,
                                          const Eigen::Ref<const Eigen::MatrixXd>& z, double t);

/// Graph form of the first-variation gradient for z of shape [n, d].
Expr first_variation_gradient_expr(const FunctionalDescriptor& desc, Expr z);

}  // namespace nwflow
