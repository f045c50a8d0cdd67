#include "regrelax/nn/graph.hpp"

#include <stdexcept>
#include <string>

namespace regrelax::nn {

GraphRun run_graph(std::span<const GraphOp> ops, std::span<const Tensor> inputs) {
  GraphRun run;
  std::vector<Var> vals;
  for (const Tensor& t : inputs) {
    Var v = run.tape.leaf(t);
    run.inputs.push_back(v);
    vals.push_back(v);
  }
  if (ops.empty()) throw std::invalid_argument("eval_graph: no ops");

  for (const GraphOp& op : ops) {
    auto arg = [&](std::size_t k) {
      if (k >= op.args.size() || op.args[k] >= vals.size()) {
        throw ShapeError(std::string(prim_name(op.prim)) + ": argument " +
                         std::to_string(k) + " missing or out of range");
      }
      return vals[op.args[k]];
    };
    Tape& t = run.tape;
    Var out;
    switch (op.prim) {
      case Prim::Input:
        throw std::invalid_argument("eval_graph: input is not an op");
      case Prim::MatMul: out = t.matmul(arg(0), arg(1), op.flag, op.flag2); break;
      case Prim::Add: out = t.add(arg(0), arg(1)); break;
      case Prim::AddRow: out = t.add_row(arg(0), arg(1)); break;
      case Prim::Mul: out = t.mul(arg(0), arg(1)); break;
      case Prim::Scale: out = t.scale(arg(0), op.scalar); break;
      case Prim::Softmax: out = t.softmax(arg(0), op.flag); break;
      case Prim::LayerNorm: out = t.layer_norm(arg(0), arg(1), arg(2)); break;
      case Prim::Gelu: out = t.gelu(arg(0)); break;
      case Prim::Tanh: out = t.tanh(arg(0)); break;
      case Prim::Gather: out = t.gather(arg(0), op.ids); break;
      case Prim::CrossEntropy: out = t.cross_entropy(arg(0), op.ids); break;
      case Prim::SliceRows: out = t.slice_rows(arg(0), op.begin, op.end); break;
      case Prim::SliceCols: out = t.slice_cols(arg(0), op.begin, op.end); break;
      case Prim::ConcatRows:
      case Prim::ConcatCols: {
        std::vector<Var> parts;
        for (std::size_t k = 0; k < op.args.size(); ++k) parts.push_back(arg(k));
        out = op.prim == Prim::ConcatRows ? t.concat_rows(parts) : t.concat_cols(parts);
        break;
      }
      case Prim::Sum: out = t.sum(arg(0)); break;
    }
    vals.push_back(out);
  }
  run.output = vals.back();
  return run;
}

Tensor eval_graph(std::span<const GraphOp> ops, std::span<const Tensor> inputs) {
  GraphRun run = run_graph(ops, inputs);
  return run.tape.value(run.output);
}

Tensor finite_diff(const ScalarFn& f, const Tensor& point, Real epsilon) {
  std::vector<std::size_t> coords(point.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return Tensor(point.shape(), finite_diff_at(f, point, coords, epsilon));
}

std::vector<Real> finite_diff_at(const ScalarFn& f, const Tensor& point,
                                 std::span<const std::size_t> coords, Real epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff: epsilon must be > 0");
  std::vector<Real> out;
  out.reserve(coords.size());
  Tensor x = point;
  for (std::size_t c : coords) {
    if (c >= x.size()) throw std::out_of_range("finite_diff: coordinate out of range");
    const Real orig = x[c];
    x[c] = orig + epsilon;
    const Real fp = f(x);
    x[c] = orig - epsilon;
    const Real fm = f(x);
    x[c] = orig;
    out.push_back((fp - fm) / (2.0 * epsilon));
  }
  return out;
}

}  // namespace regrelax::nn
