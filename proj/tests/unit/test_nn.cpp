#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "regrelax/nn/graph.hpp"
#include "regrelax/nn/tape.hpp"
#include "test_util.hpp"

using namespace regrelax;
using namespace regrelax::nn;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Plain-loop reference implementations, written without the tape.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      Real s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

Tensor naive_softmax_rows(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Real mx = -INFINITY;
    for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
    Real z = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) z += std::exp(a.at(i, j) - mx);
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = std::exp(a.at(i, j) - mx) / z;
  }
  return out;
}

Tensor naive_layer_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Real mean = 0, var = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x.at(i, j);
    mean /= static_cast<Real>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<Real>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
      out.at(i, j) = (x.at(i, j) - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return out;
}

Real naive_gelu(Real x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

// Max relative error between grad() and central differences for the scalar
// output of `ops` with respect to input `which`.
double grad_check(const std::vector<GraphOp>& ops, const std::vector<Tensor>& inputs,
                  std::size_t which, std::size_t coords = 100, std::uint64_t seed = 1) {
  GraphRun run = run_graph(ops, inputs);
  const Var wrt[] = {run.inputs[which]};
  const Tensor g = run.tape.grad(run.output, wrt)[0];
  ScalarFn f = [&](const Tensor& x) {
    std::vector<Tensor> in = inputs;
    in[which] = x;
    return eval_graph(ops, in).item();
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, inputs[which].size() - 1);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(coords, inputs[which].size() * 4); ++i) idx.push_back(pick(rng));
  const std::vector<Real> fd = finite_diff_at(f, inputs[which], idx, 1e-5);
  double worst = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) worst = std::max(worst, rel_err(g[idx[i]], fd[i]));
  return worst;
}

GraphOp op(Prim p, std::vector<std::size_t> args) {
  GraphOp o;
  o.prim = p;
  o.args = std::move(args);
  return o;
}

}  // namespace

TEST(Tensor, ShapeAndAccessors) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor({0, 4}).size(), 0u);
}

TEST(EvalGraph, MatmulIdentity) {
  std::mt19937_64 rng(3);
  const Tensor A = random_tensor({3, 4}, rng);
  const Tensor in[] = {Tensor::identity(3), A};
  const GraphOp ops[] = {op(Prim::MatMul, {0, 1})};
  EXPECT_EQ(eval_graph(ops, in), A);
}

TEST(EvalGraph, SoftmaxOfZerosIsUniform) {
  const Tensor in[] = {Tensor({1, 4}, 0.0)};
  const GraphOp ops[] = {op(Prim::Softmax, {0})};
  const Tensor out = eval_graph(ops, in);
  for (Real v : out.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(EvalGraph, ShapeMismatchNamesPrimitive) {
  const Tensor in[] = {Tensor({2, 3}), Tensor({2, 3})};
  const GraphOp ops[] = {op(Prim::MatMul, {0, 1})};
  try {
    eval_graph(ops, in);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
  const GraphOp add[] = {op(Prim::Add, {0, 1})};
  const Tensor bad[] = {Tensor({2, 3}), Tensor({3, 2})};
  try {
    eval_graph(add, bad);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos) << e.what();
  }
}

TEST(EvalGraph, RandomTwoLayerGraphMatchesNaiveInterpreter) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({5, 6}, rng);
    const Tensor w1 = random_tensor({6, 8}, rng);
    const Tensor b1 = random_tensor({8}, rng);
    const Tensor g = random_tensor({8}, rng);
    const Tensor b = random_tensor({8}, rng);
    const Tensor w2 = random_tensor({8, 4}, rng);
    const Tensor in[] = {x, w1, b1, g, b, w2};
    GraphOp sm = op(Prim::Softmax, {10});
    const std::vector<GraphOp> ops = {
        op(Prim::MatMul, {0, 1}),     // 6
        op(Prim::AddRow, {6, 2}),     // 7
        op(Prim::Gelu, {7}),          // 8
        op(Prim::LayerNorm, {8, 3, 4}),  // 9
        op(Prim::MatMul, {9, 5}),     // 10
        sm,                           // 11
    };
    const Tensor got = eval_graph(ops, in);

    Tensor h = naive_matmul(x, w1);
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) h.at(i, j) = naive_gelu(h.at(i, j) + b1[j]);
    const Tensor want = naive_softmax_rows(naive_matmul(naive_layer_norm(h, g, b), w2));
    expect_close(got, want, 1e-12);
  }
}

TEST(EvalGraph, IdenticalInputsGiveIdenticalBits) {
  std::mt19937_64 rng(5);
  const Tensor in[] = {random_tensor({7, 9}, rng), random_tensor({9, 7}, rng)};
  const GraphOp ops[] = {op(Prim::MatMul, {0, 1}), op(Prim::Softmax, {2}), op(Prim::Sum, {3})};
  EXPECT_EQ(eval_graph(ops, in), eval_graph(ops, in));
}

TEST(EvalGraph, CausalSoftmaxMasksFuture) {
  const Tensor in[] = {Tensor({3, 3}, 0.0)};
  GraphOp o = op(Prim::Softmax, {0});
  o.flag = true;
  const GraphOp ops[] = {o};
  const Tensor out = eval_graph(ops, in);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(out.at(2, 2), 1.0 / 3.0);
}

TEST(EvalGraph, CrossEntropySkipsNegativeTargets) {
  std::mt19937_64 rng(2);
  const Tensor logits = random_tensor({3, 5}, rng);
  const Tensor p = naive_softmax_rows(logits);
  GraphOp ce = op(Prim::CrossEntropy, {0});
  ce.ids = {2, -1, 4};
  const GraphOp ops[] = {ce};
  const Tensor in[] = {logits};
  EXPECT_NEAR(eval_graph(ops, in).item(), -std::log(p.at(0, 2)) - std::log(p.at(2, 4)), 1e-12);
}

TEST(Tape, NonFiniteValueNamesPrimitive) {
  Tape t;
  Var x = t.leaf(Tensor({1, 1}, 1e300));
  try {
    t.mul(x, x);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos) << e.what();
  }
}

TEST(Grad, XSquaredAtThree) {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var loss = t.mul(x, x);
  const Var wrt[] = {x};
  EXPECT_DOUBLE_EQ(t.grad(loss, wrt)[0].item(), 6.0);
}

TEST(Grad, UnreachableLeafIsZero) {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var y = t.leaf(Tensor({2, 2}, 1.0));
  Var loss = t.mul(x, x);
  const Var wrt[] = {y};
  const Tensor g = t.grad(loss, wrt)[0];
  EXPECT_EQ(g.shape(), (Shape{2, 2}));
  for (Real v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Grad, NonScalarLossThrows) {
  Tape t;
  Var x = t.leaf(Tensor({2, 2}, 1.0));
  const Var wrt[] = {x};
  EXPECT_THROW(t.grad(t.scale(x, 2.0), wrt), ShapeError);
}

TEST(Grad, FanOutAccumulates) {
  for (int k = 1; k <= 5; ++k) {
    Tape t;
    Var x = t.leaf(Tensor({2, 3}, 0.7));
    Var y = x;
    for (int i = 1; i < k; ++i) y = t.add(y, x);
    const Var wrt[] = {x};
    const Tensor g = t.grad(t.sum(y), wrt)[0];
    for (Real v : g.values()) EXPECT_DOUBLE_EQ(v, static_cast<Real>(k));
  }
}

TEST(Grad, Linearity) {
  std::mt19937_64 rng(9);
  const Tensor x0 = random_tensor({4, 4}, rng);
  const Tensor w = random_tensor({4, 4}, rng);
  const Real a = 0.7, b = -1.3;
  auto grads = [&](bool combined) {
    Tape t;
    Var x = t.leaf(x0);
    Var W = t.constant(w);
    Var f = t.sum(t.tanh(t.matmul(x, W)));
    Var g = t.sum(t.mul(x, x));
    const Var wrt[] = {x};
    if (combined) return t.grad(t.add(t.scale(f, a), t.scale(g, b)), wrt)[0];
    Tensor gf = t.grad(f, wrt)[0];
    const Tensor gg = t.grad(g, wrt)[0];
    for (std::size_t i = 0; i < gf.size(); ++i) gf[i] = a * gf[i] + b * gg[i];
    return gf;
  };
  EXPECT_LE(max_abs_diff(grads(true), grads(false)), 1e-10);
}

TEST(FiniteDiff, Quadratic) {
  ScalarFn f = [](const Tensor& x) { return x[0] * x[0]; };
  EXPECT_NEAR(finite_diff(f, Tensor::scalar(1.0), 1e-5)[0], 2.0, 1e-8);
}

TEST(FiniteDiff, ConstantIsZero) {
  ScalarFn f = [](const Tensor&) { return 4.0; };
  const Tensor g = finite_diff(f, Tensor({3}, 1.0), 1e-5);
  for (Real v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveEpsilon) {
  ScalarFn f = [](const Tensor& x) { return x[0]; };
  EXPECT_THROW(finite_diff(f, Tensor::scalar(1.0), 0.0), std::invalid_argument);
}

// Every primitive, reduced to a scalar through a random projection so no
// gradient coordinate is trivially constant.
struct PrimCase {
  const char* name;
  std::vector<Tensor> inputs;
  std::vector<GraphOp> ops;  // the last op's output is projected and summed
};

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

std::vector<PrimCase> prim_cases() {
  std::mt19937_64 rng(21);
  auto R = [&](Shape s) { return random_tensor(std::move(s), rng); };
  std::vector<PrimCase> c;
  c.push_back({"matmul", {R({3, 4}), R({4, 5})}, {op(Prim::MatMul, {0, 1})}});
  {
    GraphOp m = op(Prim::MatMul, {0, 1});
    m.flag = true;
    m.flag2 = true;
    c.push_back({"matmul_tt", {R({4, 3}), R({5, 4})}, {m}});
  }
  c.push_back({"add", {R({3, 4}), R({3, 4})}, {op(Prim::Add, {0, 1})}});
  c.push_back({"add_row", {R({3, 4}), R({4})}, {op(Prim::AddRow, {0, 1})}});
  c.push_back({"mul", {R({3, 4}), R({3, 4})}, {op(Prim::Mul, {0, 1})}});
  {
    GraphOp s = op(Prim::Scale, {0});
    s.scalar = -2.5;
    c.push_back({"scale", {R({3, 4})}, {s}});
  }
  c.push_back({"softmax", {R({3, 5})}, {op(Prim::Softmax, {0})}});
  {
    GraphOp s = op(Prim::Softmax, {0});
    s.flag = true;
    c.push_back({"softmax_causal", {R({4, 4})}, {s}});
  }
  c.push_back({"layer_norm", {R({3, 6}), R({6}), R({6})}, {op(Prim::LayerNorm, {0, 1, 2})}});
  c.push_back({"gelu", {R({3, 4})}, {op(Prim::Gelu, {0})}});
  c.push_back({"tanh", {R({3, 4})}, {op(Prim::Tanh, {0})}});
  {
    GraphOp g = op(Prim::Gather, {0});
    g.ids = {2, 0, 2, 4};
    c.push_back({"gather", {R({5, 3})}, {g}});
  }
  {
    GraphOp s = op(Prim::SliceRows, {0});
    s.begin = 1;
    s.end = 3;
    c.push_back({"slice_rows", {R({4, 3})}, {s}});
  }
  {
    GraphOp s = op(Prim::SliceCols, {0});
    s.begin = 1;
    s.end = 4;
    c.push_back({"slice_cols", {R({3, 5})}, {s}});
  }
  c.push_back({"concat_rows", {R({2, 3}), R({3, 3})}, {op(Prim::ConcatRows, {0, 1})}});
  c.push_back({"concat_cols", {R({3, 2}), R({3, 3})}, {op(Prim::ConcatCols, {0, 1})}});
  return c;
}

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  PrimCase pc = prim_cases()[static_cast<std::size_t>(GetParam())];
  // Append: out ∘ W summed, with W a fixed random tensor of out's shape.
  const Tensor probe = eval_graph(pc.ops, pc.inputs);
  std::mt19937_64 rng(99);
  const std::size_t w_index = pc.inputs.size();
  pc.inputs.push_back(random_tensor(probe.shape(), rng));
  const std::size_t out_index = pc.inputs.size() + pc.ops.size() - 1;
  pc.ops.push_back(op(Prim::Mul, {out_index, w_index}));
  pc.ops.push_back(op(Prim::Sum, {out_index + 1}));
  for (std::size_t i = 0; i < w_index; ++i) {
    EXPECT_LE(grad_check(pc.ops, pc.inputs, i), 1e-4) << pc.name << " input " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradient,
                         ::testing::Range(0, static_cast<int>(prim_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(prim_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(PrimitiveGradient, CrossEntropyMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  GraphOp ce = op(Prim::CrossEntropy, {0});
  ce.ids = {1, 3, -1, 0};
  const std::vector<GraphOp> ops = {ce};
  EXPECT_LE(grad_check(ops, {random_tensor({4, 5}, rng)}, 0), 1e-4);
}

TEST(PrimitiveGradient, SumMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const std::vector<GraphOp> ops = {op(Prim::Tanh, {0}), op(Prim::Sum, {1})};
  EXPECT_LE(grad_check(ops, {random_tensor({3, 3}, rng)}, 0), 1e-4);
}
