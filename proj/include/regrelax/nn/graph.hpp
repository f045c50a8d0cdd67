#pragma once

#include <functional>
#include <span>
#include <vector>

#include "regrelax/nn/tape.hpp"
#include "regrelax/nn/tensor.hpp"

namespace regrelax::nn {

// One step of a straight-line program. `args` index into the value list,
// which starts with the graph inputs and grows by one entry per op.
struct GraphOp {
  Prim prim = Prim::Add;
  std::vector<std::size_t> args;
  bool flag = false;   // causal softmax / transpose a
  bool flag2 = false;  // transpose b
  std::size_t begin = 0;
  std::size_t end = 0;
  Real scalar = 1.0;
  std::vector<int> ids;
};

struct GraphRun {
  Tape tape;
  std::vector<Var> inputs;
  Var output;
};

// Replays `ops` on a fresh tape; every input is a differentiable leaf.
GraphRun run_graph(std::span<const GraphOp> ops, std::span<const Tensor> inputs);

// Value of the last op.
Tensor eval_graph(std::span<const GraphOp> ops, std::span<const Tensor> inputs);

using ScalarFn = std::function<Real(const Tensor&)>;

// Central differences (f(x+εe_i) − f(x−εe_i)) / 2ε for every coordinate.
Tensor finite_diff(const ScalarFn& f, const Tensor& point, Real epsilon);

// Same, restricted to the listed flat coordinates.
std::vector<Real> finite_diff_at(const ScalarFn& f, const Tensor& point,
                                 std::span<const std::size_t> coords, Real epsilon);

}  // namespace regrelax::nn
