#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "regrelax/nn/tensor.hpp"

namespace regrelax::nn {

// The closed primitive set. Everything the transformer, the attacks and the
// training loop need is composed from these.
enum class Prim : std::uint8_t {
  Input,
  MatMul,        // op(a)·op(b), optional transposes
  Add,           // a + b, identical shapes
  AddRow,        // a + 1·r, r broadcast over rows
  Mul,           // elementwise
  Scale,         // s·a
  Softmax,       // row-wise, optional causal mask
  LayerNorm,     // row-wise, gain and bias rows
  Gelu,          // tanh approximation
  Tanh,
  Gather,        // embedding-row lookup
  CrossEntropy,  // Σ_rows −log softmax(row)[target], rows with target < 0 skipped
  SliceRows,
  SliceCols,
  ConcatRows,
  ConcatCols,
  Sum,
};

std::string_view prim_name(Prim p);

struct Var {
  std::uint32_t id = 0;
};

// Define-by-run reverse-mode tape. Values are computed eagerly when a
// primitive is recorded; nodes are appended in evaluation order, which is
// the topological order the backward pass walks in reverse.
//
// A tape is not thread-safe; build one per thread.
class Tape {
 public:
  Var input(Tensor value, bool requires_grad);
  Var leaf(Tensor value) { return input(std::move(value), true); }
  Var constant(Tensor value) { return input(std::move(value), false); }
  // Records `value` by reference; it must outlive the tape and stay unchanged.
  Var input_view(const Tensor& value, bool requires_grad);

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);
  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  Var mul(Var a, Var b);
  Var scale(Var a, Real s);
  Var softmax(Var a, bool causal = false);
  Var layer_norm(Var x, Var gain, Var bias, Real eps = 1e-5);
  Var gelu(Var x);
  Var tanh(Var x);
  Var gather(Var table, std::vector<int> ids);
  Var cross_entropy(Var logits, std::vector<int> targets);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var sum(Var a);

  const Tensor& value(Var v) const { return val(v.id); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // dLoss/dLeaf for each requested leaf, in request order. Leaves the loss
  // does not depend on get a zero tensor of their own shape.
  std::vector<Tensor> grad(Var loss, std::span<const Var> wrt) const;

 private:
  struct Node {
    Prim prim = Prim::Input;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    bool requires_grad = false;
    bool flag = false;  // causal mask, or trans_a for matmul
    bool flag2 = false;  // trans_b for matmul
    std::size_t begin = 0;
    std::size_t end = 0;
    Real scalar = 0.0;
    std::vector<int> ids;
    Tensor saved;   // softmax probs / normalized x / tanh output
    Tensor saved2;  // per-row inverse std for layer norm
    const Tensor* view = nullptr;
  };

  const Tensor& val(std::uint32_t id) const {
    const Node& n = nodes_.at(id);
    return n.view ? *n.view : n.value;
  }

  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  void backward_node(const Node& n, const Tensor& g,
                     std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

}  // namespace regrelax::nn
