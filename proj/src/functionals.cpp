#include "nwflow/functionals.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace nwflow {

FunctionalDescriptor FunctionalDescriptor::second_moment_half(Index d) {
  FunctionalDescriptor desc;
  desc.kind = FunctionalKind::second_moment_half;
  desc.dim = d;
  desc.validate();
  return desc;
}

FunctionalDescriptor FunctionalDescriptor::eif_variance_mean(Eigen::VectorXd center) {
  FunctionalDescriptor desc;
  desc.kind = FunctionalKind::eif_variance_mean;
  desc.dim = center.size();
  desc.center = std::move(center);
  desc.validate();
  return desc;
}

FunctionalDescriptor FunctionalDescriptor::expectation(Index d, std::vector<Monomial> phi) {
  FunctionalDescriptor desc;
  desc.kind = FunctionalKind::expectation;
  desc.dim = d;
  desc.phi = std::move(phi);
  desc.validate();
  return desc;
}

void FunctionalDescriptor::validate() const {
  if (dim < 1) throw ContractError("functional dimension must be positive");
  if (kind == FunctionalKind::eif_variance_mean) {
    if (center.size() != dim || !center.allFinite()) throw ContractError("EIF-variance functional needs a finite center");
  }
  if (kind == FunctionalKind::expectation) {
    for (const auto& m : phi) {
      if (static_cast<Index>(m.powers.size()) != dim) throw ContractError("monomial has wrong number of exponents");
      int degree = 0;
      for (int p : m.powers) {
        if (p < 0) throw ContractError("negative exponent in polynomial");
        degree += p;
      }
      if (degree > kMaxPolynomialDegree) throw ContractError("polynomial degree exceeds 4");
      if (!std::isfinite(m.coeff)) throw ContractError("non-finite polynomial coefficient");
    }
  }
}

std::string_view functional_config_name(FunctionalKind kind) {
  switch (kind) {
    case FunctionalKind::second_moment_half: return "variance";
    case FunctionalKind::eif_variance_mean: return "eif_mean";
    case FunctionalKind::expectation: return "expectation";
  }
  return "?";
}

FunctionalKind parse_functional_kind(std::string_view name) {
  if (name == "variance") return FunctionalKind::second_moment_half;
  if (name == "eif_mean") return FunctionalKind::eif_variance_mean;
  if (name == "expectation") return FunctionalKind::expectation;
  throw ContractError("unknown functional '" + std::string(name) + "' (expected variance, eif_mean or expectation)");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

std::vector<Monomial> parse_phi_coeffs(std::string_view text, Index d) {
  std::vector<Monomial> out;
  if (trim(text).empty()) return out;
  for (std::string_view term : split(text, ';')) {
    if (term.empty()) continue;
    const auto colon = term.find(':');
    if (colon == std::string_view::npos) throw ContractError("phi term '" + std::string(term) + "' lacks ':'");
    Monomial m;
    const std::string coeff(trim(term.substr(0, colon)));
    std::size_t used = 0;
    try {
      m.coeff = std::stod(coeff, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != coeff.size()) throw ContractError("bad phi coefficient '" + coeff + "'");
    for (std::string_view e : split(term.substr(colon + 1), ',')) {
      int p = 0;
      const auto [ptr, ec] = std::from_chars(e.data(), e.data() + e.size(), p);
      if (ec != std::errc() || ptr != e.data() + e.size()) throw ContractError("bad phi exponent '" + std::string(e) + "'");
      m.powers.push_back(p);
    }
    if (static_cast<Index>(m.powers.size()) != d) {
      throw ContractError("phi term '" + std::string(term) + "' needs " + std::to_string(d) + " exponents");
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string format_phi_coeffs(const std::vector<Monomial>& phi) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (i) os << ';';
    os << phi[i].coeff << ':';
    for (std::size_t j = 0; j < phi[i].powers.size(); ++j) os << (j ? "," : "") << phi[i].powers[j];
  }
  return os.str();
}

double functional_value(const FunctionalDescriptor& desc, const Eigen::Ref<const Eigen::VectorXd>& weights,
                        const Eigen::Ref<const Eigen::MatrixXd>& atoms) {
  if (weights.size() != atoms.rows()) throw ShapeError("one weight per atom required");
  detail::check_point(desc, atoms.cols());
  switch (desc.kind) {
    case FunctionalKind::second_moment_half:
      return 0.5 * (weights.array() * atoms.rowwise().squaredNorm().array()).sum();
    case FunctionalKind::eif_variance_mean: {
      const Eigen::RowVectorXd m = weights.transpose() * atoms / weights.sum();
      return (weights.array() * (atoms.rowwise() - m).rowwise().squaredNorm().array()).sum();
    }
    case FunctionalKind::expectation: {
      double total = 0.0;
      for (Index i = 0; i < atoms.rows(); ++i) {
        const Eigen::VectorXd z = atoms.row(i).transpose();
        total += weights[i] * first_variation(desc, z);
      }
      return total;
    }
  }
  throw ContractError("unsupported functional kind");
}

double residual_velocity(const VelocityField& field, const FunctionalDescriptor& desc,
                         const Eigen::Ref<const Eigen::VectorXd>& z, double t) {
  return (eval_velocity(field, z, t) + first_variation_gradient(desc, z)).squaredNorm();
}

double residual_logdensity(const VelocityField& field, const FunctionalDescriptor& desc,
                           const Eigen::Ref<const Eigen::VectorXd>& z, double t) {
  const double r = -divergence_exact(field, z, t) - laplacian_first_variation(desc, z);
  return r * r;
}

Expr first_variation_gradient_expr(const FunctionalDescriptor& desc, Expr z) {
  ExprGraph& g = z.graph();
  const Index d = desc.dim;
  switch (desc.kind) {
    case FunctionalKind::second_moment_half: return z;
    case FunctionalKind::eif_variance_mean: {
      const Expr identity = g.constant(Tensor::matrix(RowMatrix::Identity(d, d)));
      const Expr shift = g.constant(Tensor::vector(-desc.center));
      return scale(affine(z, identity, shift), 2.0);
    }
    case FunctionalKind::expectation: {
      std::vector<Expr> column(d);
      for (Index j = 0; j < d; ++j) {
        Tensor e = Tensor::zeros({d, 1});
        e[j] = 1.0;
        column[j] = matmul(z, g.constant(std::move(e)));
      }
      const Expr zero_col = scale(column[0], 0.0);
      Expr grad;
      for (Index k = 0; k < d; ++k) {
        Expr partial = zero_col;
        double constant_part = 0.0;
        for (const auto& m : desc.phi) {
          if (m.powers[k] == 0) continue;
          const double c = m.coeff * m.powers[k];
          Expr product;
          for (Index j = 0; j < d; ++j) {
            const int p = m.powers[j] - (j == k ? 1 : 0);
            for (int r = 0; r < p; ++r) product = product.valid() ? product * column[j] : column[j];
          }
          if (product.valid()) {
            partial = partial + scale(product, c);
          } else {
            constant_part += c;
          }
        }
        if (constant_part != 0.0) partial = partial + g.constant(Tensor::filled({1}, constant_part));
        grad = grad.valid() ? concat(grad, partial) : partial;
      }
      return grad;
    }
  }
  throw ContractError("unsupported functional kind");
}

namespace {

RowMatrix as_rows(const Eigen::Ref<const Eigen::MatrixXd>& z) { return z; }

}  // namespace

Eigen::VectorXd residual_velocity_batch(const VelocityField& field, const FunctionalDescriptor& desc,
                                        const Eigen::Ref<const Eigen::MatrixXd>& z, double t) {
  detail::check_point(desc, z.cols());
  if (z.rows() == 0) return {};
  FieldGraph fg = build_field_graph(field);
  const Expr r = row_sum(square(fg.out + first_variation_gradient_expr(desc, fg.z)), desc.dim);
  fg.graph->set_output(r);
  return eval_graph(*fg.graph, fg.bind(field, as_rows(z), t)).data();
}

Eigen::VectorXd residual_logdensity_batch(const VelocityField& field, const FunctionalDescriptor& desc,
                                          const Eigen::Ref<const Eigen::MatrixXd>& z, double t) {
  detail::check_point(desc, z.cols());
  if (z.rows() == 0) return {};
  FieldGraph fg = build_field_graph(field);
  const Expr div = divergence_exact_expr(fg.out, fg.z, z.rows(), desc.dim);
  fg.graph->set_output(div);
  const Eigen::VectorXd divergence = eval_graph(*fg.graph, fg.bind(field, as_rows(z), t)).data();
  Eigen::VectorXd out(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    const Eigen::VectorXd zi = z.row(i).transpose();
    const double r = -divergence[i] - laplacian_first_variation(desc, zi);
    out[i] = r * r;
  }
  return out;
}

}  // namespace nwflow
