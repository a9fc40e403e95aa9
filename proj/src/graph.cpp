#include "nwflow/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace nwflow {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::tanh: return "tanh";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::square: return "square";
    case Op::concat: return "concat";
    case Op::scale: return "scale";
    case Op::affine: return "affine";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

Expr ExprGraph::leaf(std::string name) {
  Node n;
  n.op = Op::leaf;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Expr ExprGraph::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.payload = constants_.size();
  constants_.push_back(std::move(value));
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Expr ExprGraph::apply(Op op, std::span<const Expr> operands, double alpha) {
  if (op == Op::leaf || op == Op::constant) throw ContractError("apply() takes a primitive op");
  if (operands.size() > 3) throw ContractError("too many operands");
  Node n;
  n.op = op;
  n.alpha = alpha;
  n.arity = static_cast<std::uint8_t>(operands.size());
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (&operands[i].graph() != this) throw ContractError("operand belongs to a different graph");
    n.args[i] = operands[i].id();
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void ExprGraph::set_output(Expr e) {
  if (&e.graph() != this) throw ContractError("output belongs to a different graph");
  output_ = e.id();
  has_output_ = true;
}

Expr ExprGraph::output() const {
  if (!has_output_) throw ContractError("graph has no designated output");
  return {const_cast<ExprGraph*>(this), output_};
}

Expr ExprGraph::expr(NodeId id) const {
  if (id >= nodes_.size()) throw ContractError("node id out of range");
  return {const_cast<ExprGraph*>(this), id};
}

const Tensor& ExprGraph::constant_value(NodeId id) const { return constants_.at(nodes_.at(id).payload); }

std::string ExprGraph::describe(NodeId id) const {
  const Node& n = nodes_.at(id);
  std::string out = "node " + std::to_string(id) + " (" + op_name(n.op);
  if (n.op == Op::leaf && !n.name.empty()) out += " '" + n.name + "'";
  return out + ")";
}

namespace {

Expr make(Op op, std::initializer_list<Expr> args, double alpha = 0.0) {
  const Expr& first = *args.begin();
  return first.graph().apply(op, std::span<const Expr>(args.begin(), args.size()), alpha);
}

}  // namespace

Expr operator+(Expr a, Expr b) { return make(Op::add, {a, b}); }
Expr operator-(Expr a, Expr b) { return make(Op::sub, {a, b}); }
Expr operator*(Expr a, Expr b) { return make(Op::mul, {a, b}); }
Expr operator*(double c, Expr a) { return make(Op::scale, {a}, c); }
Expr operator-(Expr a) { return make(Op::scale, {a}, -1.0); }
Expr matmul(Expr a, Expr b) { return make(Op::matmul, {a, b}); }
Expr tanh(Expr a) { return make(Op::tanh, {a}); }
Expr sum(Expr a) { return make(Op::sum, {a}); }
Expr mean(Expr a) { return make(Op::mean, {a}); }
Expr square(Expr a) { return make(Op::square, {a}); }
Expr concat(Expr a, Expr b) { return make(Op::concat, {a, b}); }
Expr scale(Expr a, double c) { return make(Op::scale, {a}, c); }
Expr affine(Expr x, Expr w, Expr b) { return make(Op::affine, {x, w, b}); }
Expr affine(Expr x, Expr w) { return make(Op::affine, {x, w}); }

// ---------------------------------------------------------------------------
// Numeric kernels shared by evaluation, reverse mode and forward mode

namespace {

using Map = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_fail(const std::string& where, const std::string& what) {
  throw ShapeError(where + ": " + what);
}

Tensor elementwise(Op op, const Tensor& a, const Tensor& b, const std::string& where) {
  auto combine = [op](auto&& x, auto&& y) -> Eigen::VectorXd {
    switch (op) {
      case Op::add: return x + y;
      case Op::sub: return x - y;
      default: return (x.array() * y.array()).matrix();
    }
  };
  if (a.shape() == b.shape()) return Tensor(a.shape(), combine(a.data(), b.data()));
  if (b.size() == 1) {
    return Tensor(a.shape(), combine(a.data(), Eigen::VectorXd::Constant(a.size(), b[0])));
  }
  if (a.size() == 1) {
    return Tensor(b.shape(), combine(Eigen::VectorXd::Constant(b.size(), a[0]), b.data()));
  }
  shape_fail(where, std::string(op_name(op)) + " of shapes " + to_string(a.shape()) + " and " +
                        to_string(b.shape()));
}

struct MatmulDims {
  Index m, k, n;
  Shape out;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, const std::string& where) {
  if (a.rank() == 0 || b.rank() == 0 || a.rank() > 2 || b.rank() > 2) {
    shape_fail(where, "matmul needs rank-1 or rank-2 operands, got " + to_string(a.shape()) + " and " +
                          to_string(b.shape()));
  }
  MatmulDims d{};
  d.m = a.rank() == 2 ? a.shape()[0] : 1;
  d.k = a.shape().back();
  const Index kb = b.shape()[0];
  d.n = b.rank() == 2 ? b.shape()[1] : 1;
  if (d.k != kb) {
    shape_fail(where, "matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  if (a.rank() == 2) d.out.push_back(d.m);
  if (b.rank() == 2) d.out.push_back(d.n);
  return d;
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b, const std::string& where) {
  const MatmulDims d = matmul_dims(a, b, where);
  Tensor out = Tensor::zeros(d.out);
  Eigen::Map<RowMatrix>(out.data().data(), d.m, d.n).noalias() =
      Map(a.data().data(), d.m, d.k) * Map(b.data().data(), d.k, d.n);
  return out;
}

struct AffineDims {
  Index rows, in, out;
  Shape shape;
};

AffineDims affine_dims(const Tensor& x, const Tensor& w, const Tensor* b, const std::string& where) {
  if (w.rank() != 2) shape_fail(where, "affine weight must be rank 2, got " + to_string(w.shape()));
  if (x.rank() != 1 && x.rank() != 2) shape_fail(where, "affine input must be rank 1 or 2");
  AffineDims d{};
  d.in = w.shape()[1];
  d.out = w.shape()[0];
  d.rows = x.rank() == 2 ? x.shape()[0] : 1;
  if (x.shape().back() != d.in) {
    shape_fail(where, "affine input " + to_string(x.shape()) + " does not match weight " + to_string(w.shape()));
  }
  if (b && (b->rank() != 1 || b->shape()[0] != d.out)) {
    shape_fail(where, "affine bias " + to_string(b->shape()) + " does not match weight " + to_string(w.shape()));
  }
  d.shape = x.rank() == 2 ? Shape{d.rows, d.out} : Shape{d.out};
  return d;
}

Tensor affine_kernel(const Tensor& x, const Tensor& w, const Tensor* b, const std::string& where) {
  const AffineDims d = affine_dims(x, w, b, where);
  Tensor out = Tensor::zeros(d.shape);
  Eigen::Map<RowMatrix> y(out.data().data(), d.rows, d.out);
  y.noalias() = Map(x.data().data(), d.rows, d.in) * Map(w.data().data(), d.out, d.in).transpose();
  if (b) y.rowwise() += b->data().transpose();
  return out;
}

Shape concat_shape(const Tensor& a, const Tensor& b, const std::string& where) {
  if (a.rank() != b.rank() || a.rank() == 0 || a.rank() > 2 || (a.rank() == 2 && a.shape()[0] != b.shape()[0])) {
    shape_fail(where, "cannot concat " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Shape out = a.shape();
  out.back() += b.shape().back();
  return out;
}

Tensor concat_kernel(const Tensor& a, const Tensor& b, const std::string& where) {
  Tensor out = Tensor::zeros(concat_shape(a, b, where));
  auto o = out.mat();
  o.leftCols(a.cols()) = a.mat();
  o.rightCols(b.cols()) = b.mat();
  return out;
}

Tensor unary(const Tensor& a, auto&& fn) { return Tensor(a.shape(), fn(a.data().array()).matrix()); }

Tensor scaled(const Tensor& a, double c) { return Tensor(a.shape(), c * a.data()); }

Tensor zeros_like(const Tensor& a) { return Tensor::zeros(a.shape()); }

Tensor apply_kernel(const ExprGraph& g, NodeId id, const std::vector<Tensor>& v) {
  const auto& n = g.node(id);
  const std::string where = g.describe(id);
  const Tensor& a = v[n.args[0]];
  switch (n.op) {
    case Op::add:
    case Op::sub:
    case Op::mul: return elementwise(n.op, a, v[n.args[1]], where);
    case Op::matmul: return matmul_kernel(a, v[n.args[1]], where);
    case Op::tanh: return unary(a, [](auto x) { return x.tanh(); });
    case Op::sum: return Tensor::scalar(a.data().sum());
    case Op::mean:
      if (a.size() == 0) shape_fail(where, "mean of empty tensor");
      return Tensor::scalar(a.data().mean());
    case Op::square: return unary(a, [](auto x) { return x.square(); });
    case Op::concat: return concat_kernel(a, v[n.args[1]], where);
    case Op::scale: return scaled(a, n.alpha);
    case Op::affine: return affine_kernel(a, v[n.args[1]], n.arity == 3 ? &v[n.args[2]] : nullptr, where);
    case Op::leaf:
    case Op::constant: break;
  }
  throw ContractError("apply_kernel on input node");
}

/// Adds `contribution` into `slot`, summing it down when the slot is a
/// broadcast scalar.
void accumulate(std::optional<Tensor>& slot, const Tensor& target, Tensor contribution) {
  if (contribution.size() != target.size()) {
    contribution = Tensor(target.shape(), Eigen::VectorXd::Constant(target.size(), contribution.data().sum()));
  } else if (contribution.shape() != target.shape()) {
    contribution = Tensor(target.shape(), std::move(contribution.data()));
  }
  if (!slot) {
    slot = std::move(contribution);
  } else {
    slot->data() += contribution.data();
  }
}

std::vector<char> reachable_from(const ExprGraph& g, std::span<const NodeId> roots, NodeId limit) {
  std::vector<char> mark(limit + 1, 0);
  for (NodeId r : roots) {
    if (r <= limit) mark[r] = 1;
  }
  for (NodeId i = 0; i <= limit; ++i) {
    if (mark[i]) continue;
    const auto& n = g.node(i);
    for (int k = 0; k < n.arity; ++k) {
      if (mark[n.args[k]]) {
        mark[i] = 1;
        break;
      }
    }
  }
  return mark;
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate(const ExprGraph& graph, const Bindings& bindings) {
  const NodeId out = graph.output().id();
  Evaluation ev;
  ev.graph_ = &graph;
  ev.values_.reserve(out + 1);
  for (NodeId id = 0; id <= out; ++id) {
    const auto& n = graph.node(id);
    if (n.op == Op::leaf) {
      const Tensor* bound = bindings.find(id);
      if (!bound) throw ContractError(graph.describe(id) + " is not bound");
      if (!bound->all_finite()) throw NumericError("non-finite value bound to " + graph.describe(id));
      ev.values_.push_back(*bound);
    } else if (n.op == Op::constant) {
      ev.values_.push_back(graph.constant_value(id));
    } else {
      Tensor value = apply_kernel(graph, id, ev.values_);
      if (!value.all_finite()) throw NumericError("non-finite value at " + graph.describe(id));
      ev.values_.push_back(std::move(value));
    }
  }
  return ev;
}

Tensor eval_graph(const ExprGraph& graph, const Bindings& bindings) { return evaluate(graph, bindings).output(); }

// ---------------------------------------------------------------------------
// Reverse mode

Gradients reverse_grad(const Evaluation& forward, std::span<const Expr> wrt) {
  const ExprGraph& g = forward.graph();
  const NodeId out = g.output().id();
  if (forward.output().size() != 1) {
    throw ContractError("reverse_grad needs a scalar output, got shape " + to_string(forward.output().shape()));
  }
  std::vector<NodeId> roots;
  for (const Expr& e : wrt) {
    if (g.node(e.id()).op != Op::leaf) throw ContractError("reverse_grad is taken with respect to leaves");
    roots.push_back(e.id());
  }
  const std::vector<char> needs = reachable_from(g, roots, out);

  std::vector<std::optional<Tensor>> grad(out + 1);
  Gradients result;
  if (needs[out]) {
    grad[out] = Tensor(forward.output().shape(), Eigen::VectorXd::Ones(1));
  }
  auto val = [&](NodeId id) -> const Tensor& { return forward.value(id); };

  for (NodeId id = out + 1; id-- > 0;) {
    if (!grad[id] || !needs[id]) continue;
    const auto& n = g.node(id);
    if (n.op == Op::leaf || n.op == Op::constant) continue;
    const Tensor& G = *grad[id];
    const NodeId ia = n.args[0];
    const NodeId ib = n.args[1];
    const Tensor& a = val(ia);
    switch (n.op) {
      case Op::add:
      case Op::sub: {
        if (needs[ia]) accumulate(grad[ia], a, G);
        if (needs[ib]) accumulate(grad[ib], val(ib), n.op == Op::add ? G : scaled(G, -1.0));
        break;
      }
      case Op::mul: {
        const Tensor& b = val(ib);
        if (needs[ia]) accumulate(grad[ia], a, elementwise(Op::mul, G, b, ""));
        if (needs[ib]) accumulate(grad[ib], b, elementwise(Op::mul, G, a, ""));
        break;
      }
      case Op::matmul: {
        const Tensor& b = val(ib);
        const MatmulDims d = matmul_dims(a, b, "");
        Map gm(G.data().data(), d.m, d.n);
        if (needs[ia]) {
          Tensor ga = zeros_like(a);
          Eigen::Map<RowMatrix>(ga.data().data(), d.m, d.k).noalias() = gm * Map(b.data().data(), d.k, d.n).transpose();
          accumulate(grad[ia], a, std::move(ga));
        }
        if (needs[ib]) {
          Tensor gb = zeros_like(b);
          Eigen::Map<RowMatrix>(gb.data().data(), d.k, d.n).noalias() = Map(a.data().data(), d.m, d.k).transpose() * gm;
          accumulate(grad[ib], b, std::move(gb));
        }
        break;
      }
      case Op::tanh: {
        const Tensor& y = val(id);
        accumulate(grad[ia], a, Tensor(a.shape(), (G.data().array() * (1.0 - y.data().array().square())).matrix()));
        break;
      }
      case Op::sum: accumulate(grad[ia], a, Tensor::filled(a.shape(), G[0])); break;
      case Op::mean:
        accumulate(grad[ia], a, Tensor::filled(a.shape(), G[0] / static_cast<double>(a.size())));
        break;
      case Op::square:
        accumulate(grad[ia], a, Tensor(a.shape(), (2.0 * G.data().array() * a.data().array()).matrix()));
        break;
      case Op::concat: {
        const Tensor& b = val(ib);
        auto gm = G.mat();
        if (needs[ia]) accumulate(grad[ia], a, Tensor::matrix(gm.leftCols(a.cols())));
        if (needs[ib]) accumulate(grad[ib], b, Tensor::matrix(gm.rightCols(b.cols())));
        break;
      }
      case Op::scale: accumulate(grad[ia], a, scaled(G, n.alpha)); break;
      case Op::affine: {
        const Tensor& w = val(ib);
        const Tensor* bias = n.arity == 3 ? &val(n.args[2]) : nullptr;
        const AffineDims d = affine_dims(a, w, bias, "");
        Map gm(G.data().data(), d.rows, d.out);
        if (needs[ia]) {
          Tensor gx = zeros_like(a);
          Eigen::Map<RowMatrix>(gx.data().data(), d.rows, d.in).noalias() = gm * Map(w.data().data(), d.out, d.in);
          accumulate(grad[ia], a, std::move(gx));
        }
        if (needs[ib]) {
          Tensor gw = zeros_like(w);
          Eigen::Map<RowMatrix>(gw.data().data(), d.out, d.in).noalias() =
              gm.transpose() * Map(a.data().data(), d.rows, d.in);
          accumulate(grad[ib], w, std::move(gw));
        }
        if (bias && needs[n.args[2]]) {
          accumulate(grad[n.args[2]], *bias, Tensor::vector(gm.colwise().sum().transpose()));
        }
        break;
      }
      case Op::leaf:
      case Op::constant: break;
    }
    if (id != out) grad[id].reset();
  }

  for (const Expr& e : wrt) {
    if (e.id() <= out && grad[e.id()]) {
      result.insert_or_assign(e.id(), std::move(*grad[e.id()]));
    } else {
      result.insert_or_assign(e.id(), zeros_like(forward.value(e.id()) ));
    }
  }
  return result;
}

Gradients reverse_grad(const ExprGraph& graph, const Bindings& bindings, std::span<const Expr> wrt) {
  const Evaluation ev = evaluate(graph, bindings);
  return reverse_grad(ev, wrt);
}

// ---------------------------------------------------------------------------
// Forward mode

Tensor jvp(const ExprGraph& g, const Bindings& bindings, Expr leaf, const Tensor& direction) {
  const Evaluation ev = evaluate(g, bindings);
  const NodeId out = g.output().id();
  const NodeId src = leaf.id();
  if (g.node(src).op != Op::leaf) throw ContractError("jvp is taken with respect to a leaf");
  if (direction.shape() != ev.value(src).shape()) {
    throw ShapeError("jvp direction shape " + to_string(direction.shape()) + " differs from leaf shape " +
                     to_string(ev.value(src).shape()));
  }
  if (src > out) return zeros_like(ev.output());

  std::vector<std::optional<Tensor>> tan(out + 1);
  tan[src] = direction;
  auto zero_or = [&](NodeId id) -> Tensor { return tan[id] ? *tan[id] : zeros_like(ev.value(id)); };

  for (NodeId id = src + 1; id <= out; ++id) {
    const auto& n = g.node(id);
    if (n.op == Op::leaf || n.op == Op::constant) continue;
    bool any = false;
    for (int k = 0; k < n.arity; ++k) any = any || tan[n.args[k]].has_value();
    if (!any) continue;
    const NodeId ia = n.args[0];
    const NodeId ib = n.args[1];
    const Tensor& a = ev.value(ia);
    const std::string where = g.describe(id);
    switch (n.op) {
      case Op::add:
      case Op::sub: tan[id] = elementwise(n.op, zero_or(ia), zero_or(ib), where); break;
      case Op::mul:
        tan[id] = elementwise(Op::add, elementwise(Op::mul, zero_or(ia), ev.value(ib), where),
                              elementwise(Op::mul, a, zero_or(ib), where), where);
        break;
      case Op::matmul:
        tan[id] = elementwise(Op::add, matmul_kernel(zero_or(ia), ev.value(ib), where),
                              matmul_kernel(a, zero_or(ib), where), where);
        break;
      case Op::tanh: {
        const Tensor& y = ev.value(id);
        tan[id] = Tensor(a.shape(), ((1.0 - y.data().array().square()) * tan[ia]->data().array()).matrix());
        break;
      }
      case Op::sum: tan[id] = Tensor::scalar(tan[ia]->data().sum()); break;
      case Op::mean: tan[id] = Tensor::scalar(tan[ia]->data().mean()); break;
      case Op::square:
        tan[id] = Tensor(a.shape(), (2.0 * a.data().array() * tan[ia]->data().array()).matrix());
        break;
      case Op::concat: tan[id] = concat_kernel(zero_or(ia), zero_or(ib), where); break;
      case Op::scale: tan[id] = scaled(*tan[ia], n.alpha); break;
      case Op::affine: {
        const Tensor& w = ev.value(ib);
        Tensor t = affine_kernel(zero_or(ia), w, nullptr, where);
        if (tan[ib]) t.data() += affine_kernel(a, *tan[ib], nullptr, where).data();
        if (n.arity == 3 && tan[n.args[2]]) t.mat().rowwise() += tan[n.args[2]]->data().transpose();
        tan[id] = std::move(t);
        break;
      }
      case Op::leaf:
      case Op::constant: break;
    }
  }
  return zero_or(out);
}

double finite_diff_check(const ExprGraph& graph, const Bindings& bindings, Expr leaf, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check needs step > 0");
  const Expr wrt[] = {leaf};
  const Gradients grads = reverse_grad(graph, bindings, wrt);
  const Tensor& g = grads.at(leaf.id());

  Bindings probe = bindings;
  Tensor& x = probe.at(leaf);
  double worst = 0.0;
  for (Index j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + step;
    const double up = eval_graph(graph, probe).item();
    x[j] = orig - step;
    const double down = eval_graph(graph, probe).item();
    x[j] = orig;
    worst = std::max(worst, std::abs(g[j] - (up - down) / (2.0 * step)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Symbolic forward mode

Expr tangent(Expr output, Expr wrt, Expr direction) {
  ExprGraph& g = output.graph();
  const NodeId out = output.id();
  const NodeId src = wrt.id();
  if (src > out) return {};
  // Snapshot the node range first: the loop appends nodes to the graph.
  std::vector<Expr> tan(out + 1);
  tan[src] = direction;
  auto zero_or = [&](NodeId id) { return tan[id].valid() ? tan[id] : scale(g.expr(id), 0.0); };

  for (NodeId id = src + 1; id <= out; ++id) {
    const ExprGraph::Node n = g.node(id);
    if (n.op == Op::leaf || n.op == Op::constant) continue;
    bool any = false;
    for (int k = 0; k < n.arity; ++k) any = any || tan[n.args[k]].valid();
    if (!any) continue;
    const Expr a = g.expr(n.args[0]);
    const Expr ta = tan[n.args[0]];
    const Expr tb = n.arity > 1 ? tan[n.args[1]] : Expr{};
    switch (n.op) {
      case Op::add: tan[id] = zero_or(n.args[0]) + zero_or(n.args[1]); break;
      case Op::sub: tan[id] = zero_or(n.args[0]) - zero_or(n.args[1]); break;
      case Op::mul: {
        const Expr b = g.expr(n.args[1]);
        if (ta.valid() && tb.valid()) {
          tan[id] = ta * b + a * tb;
        } else {
          tan[id] = ta.valid() ? ta * b : a * tb;
        }
        break;
      }
      case Op::matmul: {
        const Expr b = g.expr(n.args[1]);
        if (ta.valid() && tb.valid()) {
          tan[id] = matmul(ta, b) + matmul(a, tb);
        } else {
          tan[id] = ta.valid() ? matmul(ta, b) : matmul(a, tb);
        }
        break;
      }
      case Op::tanh: {
        const Expr y = g.expr(id);
        tan[id] = ta - square(y) * ta;
        break;
      }
      case Op::sum: tan[id] = sum(ta); break;
      case Op::mean: tan[id] = mean(ta); break;
      case Op::square: tan[id] = scale(a * ta, 2.0); break;
      case Op::concat: tan[id] = concat(zero_or(n.args[0]), zero_or(n.args[1])); break;
      case Op::scale: tan[id] = scale(ta, n.alpha); break;
      case Op::affine: {
        const Expr w = g.expr(n.args[1]);
        Expr t;
        if (ta.valid()) t = affine(ta, w);
        if (tb.valid()) t = t.valid() ? t + affine(a, tb) : affine(a, tb);
        if (n.arity == 3 && tan[n.args[2]].valid()) {
          const Expr bias_only = affine(scale(a, 0.0), scale(w, 0.0), tan[n.args[2]]);
          t = t.valid() ? t + bias_only : bias_only;
        }
        tan[id] = t;
        break;
      }
      case Op::leaf:
      case Op::constant: break;
    }
  }
  return tan[out];
}

}  // namespace nwflow
