#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nwflow/tensor.hpp"

namespace nwflow {

using NodeId = std::size_t;

/// The closed primitive set of the expression graph. `leaf` and `constant`
/// are the two kinds of inputs; everything else is a primitive application.
enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  matmul,
  tanh,
  sum,
  mean,
  square,
  concat,
  scale,
  affine,
};

const char* op_name(Op op);

class ExprGraph;

/// Handle to a node of an ExprGraph. Cheap to copy; only valid while the
/// owning graph is alive.
class Expr {
 public:
  Expr() = default;

  ExprGraph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class ExprGraph;
  Expr(ExprGraph* graph, NodeId id) : graph_(graph), id_(id) {}

  ExprGraph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Define-by-run expression DAG. Nodes are appended in topological order and
/// never mutated, so a built graph can be evaluated concurrently from several
/// threads.
class ExprGraph {
 public:
  struct Node {
    Op op = Op::leaf;
    std::array<NodeId, 3> args{};
    std::uint8_t arity = 0;
    double alpha = 0.0;       // scale factor for Op::scale
    std::size_t payload = 0;  // constant slot for Op::constant
    std::string name;         // leaves only
  };

  ExprGraph() = default;
  ExprGraph(const ExprGraph&) = delete;
  ExprGraph& operator=(const ExprGraph&) = delete;

  Expr leaf(std::string name);
  Expr constant(Tensor value);
  Expr apply(Op op, std::span<const Expr> operands, double alpha = 0.0);

  void set_output(Expr e);
  Expr output() const;
  bool has_output() const { return has_output_; }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  Expr expr(NodeId id) const;
  const Tensor& constant_value(NodeId id) const;
  std::string describe(NodeId id) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> constants_;
  NodeId output_ = 0;
  bool has_output_ = false;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
/// Elementwise product; a 1-element operand broadcasts.
Expr operator*(Expr a, Expr b);
Expr operator*(double c, Expr a);
Expr operator-(Expr a);

Expr matmul(Expr a, Expr b);
Expr tanh(Expr a);
Expr sum(Expr a);
Expr mean(Expr a);
Expr square(Expr a);
/// Concatenation along the last axis.
Expr concat(Expr a, Expr b);
Expr scale(Expr a, double c);
/// x * W^T + b, with x of shape [n, in] or [in], W [out, in], b [out].
Expr affine(Expr x, Expr w, Expr b);
Expr affine(Expr x, Expr w);

/// Leaf values for one evaluation.
class Bindings {
 public:
  void set(Expr leaf, Tensor value) { values_.insert_or_assign(leaf.id(), std::move(value)); }
  const Tensor* find(NodeId id) const {
    auto it = values_.find(id);
    return it == values_.end() ? nullptr : &it->second;
  }
  Tensor& at(Expr leaf) { return values_.at(leaf.id()); }

 private:
  std::unordered_map<NodeId, Tensor> values_;
};

/// Forward values of every node up to and including the output.
class Evaluation {
 public:
  const Tensor& value(Expr e) const { return values_.at(e.id()); }
  const Tensor& value(NodeId id) const { return values_.at(id); }
  const Tensor& output() const { return values_.back(); }
  const ExprGraph& graph() const { return *graph_; }

 private:
  friend Evaluation evaluate(const ExprGraph&, const Bindings&);
  const ExprGraph* graph_ = nullptr;
  std::vector<Tensor> values_;
};

using Gradients = std::unordered_map<NodeId, Tensor>;

Evaluation evaluate(const ExprGraph& graph, const Bindings& bindings);
Tensor eval_graph(const ExprGraph& graph, const Bindings& bindings);

/// d(output)/d(leaf) for every requested leaf. The output must be a scalar.
Gradients reverse_grad(const ExprGraph& graph, const Bindings& bindings, std::span<const Expr> wrt);
Gradients reverse_grad(const Evaluation& forward, std::span<const Expr> wrt);

/// Jacobian of the output with respect to `leaf`, applied to `direction`.
Tensor jvp(const ExprGraph& graph, const Bindings& bindings, Expr leaf, const Tensor& direction);

/// Max over coordinates of |reverse gradient - central difference|.
double finite_diff_check(const ExprGraph& graph, const Bindings& bindings, Expr leaf, double step);

/// Appends nodes computing the directional derivative of `output` with respect
/// to the node `wrt` along `direction`, holding every other input fixed.
/// Returns an invalid Expr when `output` does not depend on `wrt`.
Expr tangent(Expr output, Expr wrt, Expr direction);

}  // namespace nwflow
