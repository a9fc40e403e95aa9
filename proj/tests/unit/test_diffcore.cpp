#include <doctest.h>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "nwflow/field.hpp"
#include "nwflow/graph.hpp"

using namespace nwflow;
using testutil::random_tensor;

TEST_SUITE("diffcore") {

TEST_CASE("eval_graph on small expressions") {
  ExprGraph g;
  const Expr x = g.leaf("x");
  g.set_output(square(x));
  Bindings b;
  b.set(x, Tensor::scalar(3.0));
  CHECK(eval_graph(g, b).item() == 9.0);

  ExprGraph h;
  const Expr y = h.leaf("y");
  h.set_output(tanh(y));
  Bindings c;
  c.set(y, Tensor::scalar(0.0));
  CHECK(eval_graph(h, c).item() == 0.0);

  ExprGraph m;
  const Expr a = m.leaf("A"), z = m.leaf("z");
  m.set_output(matmul(a, z));
  Bindings d;
  d.set(a, Tensor::matrix((RowMatrix(2, 2) << 1, 2, 3, 4).finished()));
  d.set(z, Tensor::vector(Eigen::Vector2d(1, 1)));
  const Tensor out = eval_graph(m, d);
  CHECK(out.shape() == Shape{2});
  CHECK(out[0] == 3.0);
  CHECK(out[1] == 7.0);
}

TEST_CASE("eval_graph leaves the bindings untouched and is bit-reproducible") {
  Rng rng(1);
  ExprGraph g;
  const Expr x = g.leaf("x"), w = g.leaf("w");
  g.set_output(sum(tanh(affine(x, w))));
  Bindings b;
  b.set(x, random_tensor(rng, {5, 3}));
  b.set(w, random_tensor(rng, {4, 3}));
  const Tensor before = *b.find(x.id());
  const double v1 = eval_graph(g, b).item();
  const double v2 = eval_graph(g, b).item();
  CHECK(v1 == v2);
  CHECK(*b.find(x.id()) == before);
}

TEST_CASE("shape mismatches name the offending node") {
  ExprGraph g;
  const Expr a = g.leaf("a"), b = g.leaf("b");
  g.set_output(a + b);
  Bindings bind;
  bind.set(a, Tensor::zeros({2, 3}));
  bind.set(b, Tensor::zeros({3, 2}));
  try {
    eval_graph(g, bind);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("non-finite values are reported") {
  ExprGraph g;
  const Expr a = g.leaf("a");
  g.set_output(square(a));
  Bindings bind;
  bind.set(a, Tensor::scalar(1e200));
  CHECK_THROWS_AS(eval_graph(g, bind), NumericError);
  bind.set(a, Tensor::scalar(std::nan("")));
  CHECK_THROWS_AS(eval_graph(g, bind), NumericError);
}

TEST_CASE("unbound leaves are a contract error") {
  ExprGraph g;
  const Expr a = g.leaf("a");
  g.set_output(square(a));
  CHECK_THROWS_AS(eval_graph(g, Bindings{}), ContractError);
}

TEST_CASE("reverse_grad small cases") {
  ExprGraph g;
  const Expr x = g.leaf("x");
  g.set_output(square(x));
  Bindings b;
  b.set(x, Tensor::scalar(3.0));
  const Expr wrt[] = {x};
  CHECK(reverse_grad(g, b, wrt).at(x.id()).item() == doctest::Approx(6.0));

  ExprGraph h;
  const Expr y = h.leaf("y");
  h.set_output(tanh(y));
  Bindings c;
  c.set(y, Tensor::scalar(0.0));
  const Expr wrt_y[] = {y};
  CHECK(reverse_grad(h, c, wrt_y).at(y.id()).item() == doctest::Approx(1.0));

  ExprGraph m;
  const Expr v = m.leaf("v");
  m.set_output(mean(square(v)));
  Bindings d;
  d.set(v, Tensor::vector(Eigen::Vector3d(1, 2, 3)));
  const Expr wrt_v[] = {v};
  const Tensor gv = reverse_grad(m, d, wrt_v).at(v.id());
  CHECK(gv[0] == doctest::Approx(2.0 / 3.0));
  CHECK(gv[1] == doctest::Approx(4.0 / 3.0));
  CHECK(gv[2] == doctest::Approx(2.0));
}

TEST_CASE("reverse_grad needs a scalar output") {
  ExprGraph g;
  const Expr x = g.leaf("x");
  g.set_output(square(x));
  Bindings b;
  b.set(x, Tensor::vector(Eigen::Vector2d(1, 2)));
  const Expr wrt[] = {x};
  CHECK_THROWS_AS(reverse_grad(g, b, wrt), ContractError);
}

TEST_CASE("jvp small cases") {
  ExprGraph g;
  const Expr a = g.leaf("A"), z = g.leaf("z");
  g.set_output(matmul(a, z));
  Bindings b;
  b.set(a, Tensor::matrix((RowMatrix(2, 2) << 1, 2, 3, 4).finished()));
  b.set(z, Tensor::vector(Eigen::Vector2d(0.5, -1)));
  const Tensor col = jvp(g, b, z, Tensor::vector(Eigen::Vector2d(1, 0)));
  CHECK(col[0] == 1.0);
  CHECK(col[1] == 3.0);

  ExprGraph id;
  const Expr w = id.leaf("w");
  id.set_output(w);
  Bindings c;
  c.set(w, Tensor::vector(Eigen::Vector3d(1, 2, 3)));
  const Tensor v = Tensor::vector(Eigen::Vector3d(0.25, -4, 9));
  CHECK(jvp(id, c, w, v) == v);

  ExprGraph sq;
  const Expr s = sq.leaf("s");
  sq.set_output(square(s));
  Bindings e;
  e.set(s, Tensor::vector(Eigen::Vector2d(1, 2)));
  const Tensor out = jvp(sq, e, s, Tensor::vector(Eigen::Vector2d(0, 1)));
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 4.0);

  CHECK_THROWS_AS(jvp(sq, e, s, Tensor::vector(Eigen::Vector3d(0, 1, 0))), ShapeError);
}

TEST_CASE("finite_diff_check small cases") {
  ExprGraph g;
  const Expr x = g.leaf("x");
  g.set_output(square(x));
  Bindings b;
  b.set(x, Tensor::scalar(3.0));
  CHECK(finite_diff_check(g, b, x, 1e-5) < 1e-6);

  ExprGraph c;
  const Expr y = c.leaf("y");
  const Expr k = c.constant(Tensor::scalar(2.5));
  c.set_output(sum(k + scale(y, 0.0)));
  Bindings cb;
  cb.set(y, Tensor::scalar(1.0));
  CHECK(finite_diff_check(c, cb, y, 1e-5) == 0.0);
}

TEST_CASE("MLP scalar loss gradient matches central differences") {
  const MlpField field(init_params(MlpSpec{2, {16, 16}}, 21));
  FieldGraph fg = build_field_graph(field);
  fg.graph->set_output(mean(square(fg.out)));
  Rng rng(4);
  const RowMatrix z = rng.normal_matrix(6, 2);
  const Bindings b = fg.bind(field, z, 0.7);
  for (const Expr& p : fg.params) CHECK(finite_diff_check(*fg.graph, b, p, 1e-5) < 1e-4);
  CHECK(finite_diff_check(*fg.graph, b, fg.z, 1e-5) < 1e-4);
}

// One graph per primitive, each reduced to a scalar by a fixed random
// weighting so every output coordinate matters.
struct PrimitiveCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<Expr(ExprGraph&, std::span<const Expr>)> build;
};

std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"add", {{3, 2}, {3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return x[0] + x[1]; }},
      {"sub", {{3, 2}, {3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return x[0] - x[1]; }},
      {"mul", {{3, 2}, {3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return x[0] * x[1]; }},
      {"mul broadcast", {{3, 2}, {1, 1}}, [](ExprGraph&, std::span<const Expr> x) { return x[0] * x[1]; }},
      {"matmul", {{3, 4}, {4, 2}}, [](ExprGraph&, std::span<const Expr> x) { return matmul(x[0], x[1]); }},
      {"matmul vec", {{3, 4}, {4}}, [](ExprGraph&, std::span<const Expr> x) { return matmul(x[0], x[1]); }},
      {"tanh", {{3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return tanh(x[0]); }},
      {"sum", {{3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return sum(x[0]); }},
      {"mean", {{3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return mean(x[0]); }},
      {"square", {{3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return square(x[0]); }},
      {"concat", {{3, 2}, {3, 1}}, [](ExprGraph&, std::span<const Expr> x) { return concat(x[0], x[1]); }},
      {"scale", {{3, 2}}, [](ExprGraph&, std::span<const Expr> x) { return scale(x[0], -1.7); }},
      {"affine", {{3, 4}, {2, 4}, {2}}, [](ExprGraph&, std::span<const Expr> x) { return affine(x[0], x[1], x[2]); }},
  };
}

TEST_CASE("every primitive agrees with central differences at 100 random points") {
  Rng rng(99);
  for (const auto& pc : primitive_cases()) {
    CAPTURE(pc.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      ExprGraph g;
      std::vector<Expr> leaves;
      for (std::size_t i = 0; i < pc.inputs.size(); ++i) leaves.push_back(g.leaf("x" + std::to_string(i)));
      const Expr out = pc.build(g, leaves);
      Bindings b;
      for (std::size_t i = 0; i < leaves.size(); ++i) b.set(leaves[i], random_tensor(rng, pc.inputs[i]));
      g.set_output(out);
      const Tensor value = eval_graph(g, b);
      const Expr weights = g.constant(random_tensor(rng, value.shape()));
      g.set_output(sum(out * weights));
      const Gradients grads = reverse_grad(g, b, leaves);
      for (const Expr& leaf : leaves) {
        const Tensor& gr = grads.at(leaf.id());
        Bindings probe = b;
        for (Index k = 0; k < gr.size(); ++k) {
          const double h = 1e-6;
          const double x0 = probe.at(leaf)[k];
          probe.at(leaf)[k] = x0 + h;
          const double fp = eval_graph(g, probe).item();
          probe.at(leaf)[k] = x0 - h;
          const double fm = eval_graph(g, probe).item();
          probe.at(leaf)[k] = x0;
          const double fd = (fp - fm) / (2 * h);
          worst = std::max(worst, std::abs(fd - gr[k]) / std::max(1.0, std::abs(gr[k])));
        }
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("jvp is consistent with reverse_grad") {
  Rng rng(5);
  const MlpField field(init_params(MlpSpec{2, {8, 8}}, 8));
  FieldGraph fg = build_field_graph(field);
  fg.graph->set_output(sum(square(fg.out)));
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrix z = rng.normal_matrix(3, 2);
    const Bindings b = fg.bind(field, z, rng.uniform());
    const Tensor v = random_tensor(rng, {3, 2});
    const Expr wrt[] = {fg.z};
    const Tensor g = reverse_grad(*fg.graph, b, wrt).at(fg.z.id());
    CHECK(std::abs(jvp(*fg.graph, b, fg.z, v).item() - g.data().dot(v.data())) < 1e-10);
  }
}

TEST_CASE("symbolic tangent equals numeric jvp") {
  Rng rng(6);
  const MlpField field(init_params(MlpSpec{3, {8}}, 2));
  FieldGraph fg = build_field_graph(field);
  const Expr dir = fg.graph->leaf("dir");
  const Expr tan = tangent(fg.out, fg.z, dir);
  const RowMatrix z = rng.normal_matrix(4, 3);
  Bindings b = fg.bind(field, z, 0.2);
  const Tensor v = random_tensor(rng, {4, 3});
  b.set(dir, v);
  const Tensor numeric = jvp(*fg.graph, b, fg.z, v);
  fg.graph->set_output(tan);
  const Tensor symbolic = eval_graph(*fg.graph, b);
  CHECK((numeric.data() - symbolic.data()).cwiseAbs().maxCoeff() < 1e-12);
}

}  // TEST_SUITE
