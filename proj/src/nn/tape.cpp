#include "regrelax/nn/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace regrelax::nn {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap as_mat(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

// out = op(a)·op(b), or out += ... when accumulate is set.
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out,
          bool accumulate) {
  auto A = as_mat(a);
  auto B = as_mat(b);
  auto C = as_mat(out);
  if (!accumulate) C.setZero();
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kGeluA = 0.044715;

[[noreturn]] void shape_fail(Prim p, const std::string& what) {
  throw ShapeError(std::string(prim_name(p)) + ": " + what);
}

void accumulate(std::vector<Tensor>& grads, std::uint32_t id, const Tensor& g) {
  Tensor& dst = grads[id];
  if (dst.empty() && dst.shape().empty()) {
    dst = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

std::string_view prim_name(Prim p) {
  switch (p) {
    case Prim::Input: return "input";
    case Prim::MatMul: return "matmul";
    case Prim::Add: return "add";
    case Prim::AddRow: return "add_row";
    case Prim::Mul: return "mul";
    case Prim::Scale: return "scale";
    case Prim::Softmax: return "softmax";
    case Prim::LayerNorm: return "layer_norm";
    case Prim::Gelu: return "gelu";
    case Prim::Tanh: return "tanh";
    case Prim::Gather: return "gather";
    case Prim::CrossEntropy: return "cross_entropy";
    case Prim::SliceRows: return "slice_rows";
    case Prim::SliceCols: return "slice_cols";
    case Prim::ConcatRows: return "concat_rows";
    case Prim::ConcatCols: return "concat_cols";
    case Prim::Sum: return "sum";
  }
  return "unknown";
}

Var Tape::push(Node n) {
  if (!n.value.all_finite()) {
    throw NonFiniteError(std::string(prim_name(n.prim)) +
                         ": produced a non-finite value");
  }
  if (n.prim != Prim::Input) {
    n.requires_grad = std::any_of(n.inputs.begin(), n.inputs.end(),
                                  [&](std::uint32_t i) { return nodes_[i].requires_grad; });
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.prim = Prim::Input;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::input_view(const Tensor& value, bool requires_grad) {
  Node n;
  n.prim = Prim::Input;
  n.view = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t ar = trans_a ? A.cols() : A.rows();
  const std::size_t ak = trans_a ? A.rows() : A.cols();
  const std::size_t bk = trans_b ? B.cols() : B.rows();
  const std::size_t bc = trans_b ? B.rows() : B.cols();
  if (ak != bk) {
    shape_fail(Prim::MatMul, "inner dimensions differ, " + shape_str(A.shape()) +
                                 (trans_a ? "ᵀ" : "") + " · " + shape_str(B.shape()) +
                                 (trans_b ? "ᵀ" : ""));
  }
  Node n;
  n.prim = Prim::MatMul;
  n.inputs = {a.id, b.id};
  n.flag = trans_a;
  n.flag2 = trans_b;
  n.value = Tensor({ar, bc});
  if (ak > 0 && ar > 0 && bc > 0) gemm(A, trans_a, B, trans_b, n.value, false);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape() != B.shape()) {
    shape_fail(Prim::Add, shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Node n;
  n.prim = Prim::Add;
  n.inputs = {a.id, b.id};
  n.value = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.value[i] += B[i];
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.size() != A.cols()) {
    shape_fail(Prim::AddRow, "row of " + std::to_string(R.size()) +
                                 " entries for " + shape_str(A.shape()));
  }
  Node n;
  n.prim = Prim::AddRow;
  n.inputs = {a.id, row.id};
  n.value = A;
  const std::size_t c = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) n.value[r * c + j] += R[j];
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape() != B.shape()) {
    shape_fail(Prim::Mul, shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Node n;
  n.prim = Prim::Mul;
  n.inputs = {a.id, b.id};
  n.value = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.value[i] *= B[i];
  return push(std::move(n));
}

Var Tape::scale(Var a, Real s) {
  Node n;
  n.prim = Prim::Scale;
  n.inputs = {a.id};
  n.scalar = s;
  n.value = value(a);
  for (Real& v : n.value.values()) v *= s;
  return push(std::move(n));
}

Var Tape::softmax(Var a, bool causal) {
  const Tensor& A = value(a);
  const std::size_t rows = A.rows();
  const std::size_t cols = A.cols();
  if (causal && rows > cols) {
    shape_fail(Prim::Softmax, "causal mask needs cols >= rows, got " +
                                  shape_str(A.shape()));
  }
  Node n;
  n.prim = Prim::Softmax;
  n.inputs = {a.id};
  n.flag = causal;
  n.value = Tensor(A.shape(), 0.0);
  // Causal rows attend to the first (cols - rows + r + 1) columns.
  const std::size_t offset = causal ? cols - rows : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t limit = causal ? offset + r + 1 : cols;
    const Real* x = A.data() + r * cols;
    Real* y = n.value.data() + r * cols;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, x[j]);
    Real z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < limit; ++j) y[j] /= z;
  }
  return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gain, Var bias, Real eps) {
  const Tensor& X = value(x);
  const Tensor& G = value(gain);
  const Tensor& B = value(bias);
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  if (G.size() != cols || B.size() != cols) {
    shape_fail(Prim::LayerNorm, "gain/bias of " + std::to_string(G.size()) + "/" +
                                    std::to_string(B.size()) + " entries for " +
                                    shape_str(X.shape()));
  }
  Node n;
  n.prim = Prim::LayerNorm;
  n.inputs = {x.id, gain.id, bias.id};
  n.scalar = eps;
  n.value = Tensor(X.shape());
  n.saved = Tensor(X.shape());
  n.saved2 = Tensor({rows == 0 ? std::size_t{0} : rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = X.data() + r * cols;
    Real mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<Real>(cols);
    Real var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<Real>(cols);
    const Real rstd = 1.0 / std::sqrt(var + eps);
    n.saved2[r] = rstd;
    for (std::size_t j = 0; j < cols; ++j) {
      const Real xh = (xr[j] - mean) * rstd;
      n.saved[r * cols + j] = xh;
      n.value[r * cols + j] = xh * G[j] + B[j];
    }
  }
  return push(std::move(n));
}

Var Tape::gelu(Var x) {
  Node n;
  n.prim = Prim::Gelu;
  n.inputs = {x.id};
  n.value = value(x);
  n.saved = Tensor(n.value.shape());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    const Real v = n.value[i];
    const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    n.saved[i] = t;
    n.value[i] = 0.5 * v * (1.0 + t);
  }
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  Node n;
  n.prim = Prim::Tanh;
  n.inputs = {x.id};
  n.value = value(x);
  for (Real& v : n.value.values()) v = std::tanh(v);
  return push(std::move(n));
}

Var Tape::gather(Var table, std::vector<int> ids) {
  const Tensor& T = value(table);
  const std::size_t rows = T.rows();
  const std::size_t cols = T.cols();
  Node n;
  n.prim = Prim::Gather;
  n.inputs = {table.id};
  n.value = Tensor({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      shape_fail(Prim::Gather, "id " + std::to_string(ids[i]) + " outside table of " +
                                   std::to_string(rows) + " rows");
    }
    std::copy_n(T.data() + static_cast<std::size_t>(ids[i]) * cols, cols,
                n.value.data() + i * cols);
  }
  n.ids = std::move(ids);
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets) {
  const Tensor& L = value(logits);
  const std::size_t rows = L.rows();
  const std::size_t cols = L.cols();
  if (targets.size() != rows) {
    shape_fail(Prim::CrossEntropy, std::to_string(targets.size()) + " targets for " +
                                       shape_str(L.shape()));
  }
  Node n;
  n.prim = Prim::CrossEntropy;
  n.inputs = {logits.id};
  n.saved = Tensor(L.shape(), 0.0);
  Real total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= cols) {
      shape_fail(Prim::CrossEntropy, "target " + std::to_string(t) + " outside " +
                                         std::to_string(cols) + " classes");
    }
    const Real* x = L.data() + r * cols;
    Real* p = n.saved.data() + r * cols;
    Real mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    Real z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < cols; ++j) p[j] /= z;
    total += (mx + std::log(z)) - x[t];
  }
  n.ids = std::move(targets);
  n.value = Tensor::scalar(total);
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  if (begin > end || end > A.rows()) {
    shape_fail(Prim::SliceRows, "rows [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") of " + shape_str(A.shape()));
  }
  const std::size_t cols = A.cols();
  Node n;
  n.prim = Prim::SliceRows;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  n.value = Tensor({end - begin, cols});
  std::copy(A.data() + begin * cols, A.data() + end * cols, n.value.data());
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  if (begin > end || end > A.cols()) {
    shape_fail(Prim::SliceCols, "cols [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") of " + shape_str(A.shape()));
  }
  const std::size_t rows = A.rows();
  const std::size_t cols = A.cols();
  const std::size_t w = end - begin;
  Node n;
  n.prim = Prim::SliceCols;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  n.value = Tensor({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(A.data() + r * cols + begin, w, n.value.data() + r * w);
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) shape_fail(Prim::ConcatRows, "no parts");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  Node n;
  n.prim = Prim::ConcatRows;
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (P.cols() != cols) {
      shape_fail(Prim::ConcatRows, "column mismatch " + shape_str(P.shape()) + " vs " +
                                       std::to_string(cols) + " cols");
    }
    rows += P.rows();
    n.inputs.push_back(p.id);
  }
  n.value = Tensor({rows, cols});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    std::copy(P.data(), P.data() + P.size(), n.value.data() + off);
    off += P.size();
  }
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) shape_fail(Prim::ConcatCols, "no parts");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  Node n;
  n.prim = Prim::ConcatCols;
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (P.rows() != rows) {
      shape_fail(Prim::ConcatCols, "row mismatch " + shape_str(P.shape()) + " vs " +
                                       std::to_string(rows) + " rows");
    }
    cols += P.cols();
    n.inputs.push_back(p.id);
  }
  n.value = Tensor({rows, cols});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    const std::size_t w = P.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(P.data() + r * w, w, n.value.data() + r * cols + c0);
    c0 += w;
  }
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n;
  n.prim = Prim::Sum;
  n.inputs = {a.id};
  Real s = 0.0;
  for (Real v : value(a).values()) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

std::vector<Tensor> Tape::grad(Var loss, std::span<const Var> wrt) const {
  const Tensor& L = value(loss);
  if (L.size() != 1) {
    throw ShapeError("grad: loss must be scalar, got " + shape_str(L.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  if (requires_grad(loss)) {
    grads[loss.id] = Tensor(L.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || grads[i].shape().empty()) continue;
      if (n.prim == Prim::Input) continue;
      backward_node(n, grads[i], grads);
    }
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    if (grads[w.id].shape().empty()) out.emplace_back(value(w).shape(), 0.0);
    else out.push_back(grads[w.id]);
  }
  return out;
}

void Tape::backward_node(const Node& n, const Tensor& g,
                         std::vector<Tensor>& grads) const {
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return val(n.inputs[k]); };

  switch (n.prim) {
    case Prim::Input:
      return;
    case Prim::MatMul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      const bool ta = n.flag;
      const bool tb = n.flag2;
      if (wants(0) && A.size() > 0) {
        Tensor ga(A.shape());
        // C = op(A) op(B): dop(A) = G op(B)ᵀ.
        if (!ta) gemm(g, false, B, !tb, ga, false);
        else gemm(B, tb, g, true, ga, false);
        accumulate(grads, n.inputs[0], ga);
      }
      if (wants(1) && B.size() > 0) {
        Tensor gb(B.shape());
        if (!tb) gemm(A, !ta, g, false, gb, false);
        else gemm(g, true, A, ta, gb, false);
        accumulate(grads, n.inputs[1], gb);
      }
      return;
    }
    case Prim::Add:
      if (wants(0)) accumulate(grads, n.inputs[0], g);
      if (wants(1)) accumulate(grads, n.inputs[1], g);
      return;
    case Prim::AddRow: {
      if (wants(0)) accumulate(grads, n.inputs[0], g);
      if (wants(1)) {
        Tensor gr(in(1).shape(), 0.0);
        const std::size_t c = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) gr[j] += g[r * c + j];
        accumulate(grads, n.inputs[1], gr);
      }
      return;
    }
    case Prim::Mul: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        const Tensor& other = in(1 - k);
        Tensor gk(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gk[i] = g[i] * other[i];
        accumulate(grads, n.inputs[k], gk);
      }
      return;
    }
    case Prim::Scale: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * n.scalar;
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::Softmax: {
      const Tensor& y = n.value;
      const std::size_t cols = y.cols();
      Tensor ga(y.shape(), 0.0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const Real* yr = y.data() + r * cols;
        const Real* gr = g.data() + r * cols;
        Real dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
        Real* out = ga.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] = yr[j] * (gr[j] - dot);
      }
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::LayerNorm: {
      const Tensor& xh = n.saved;
      const Tensor& G = in(1);
      const std::size_t rows = xh.rows();
      const std::size_t cols = xh.cols();
      if (wants(0)) {
        Tensor gx(xh.shape());
        const Real inv_n = 1.0 / static_cast<Real>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          Real s1 = 0.0;
          Real s2 = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const Real d = g[r * cols + j] * G[j];
            s1 += d;
            s2 += d * xh[r * cols + j];
          }
          const Real rstd = n.saved2[r];
          for (std::size_t j = 0; j < cols; ++j) {
            const Real d = g[r * cols + j] * G[j];
            gx[r * cols + j] = rstd * (d - inv_n * s1 - xh[r * cols + j] * inv_n * s2);
          }
        }
        accumulate(grads, n.inputs[0], gx);
      }
      if (wants(1)) {
        Tensor gg(G.shape(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) gg[j] += g[r * cols + j] * xh[r * cols + j];
        accumulate(grads, n.inputs[1], gg);
      }
      if (wants(2)) {
        Tensor gb(in(2).shape(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
        accumulate(grads, n.inputs[2], gb);
      }
      return;
    }
    case Prim::Gelu: {
      const Tensor& x = in(0);
      Tensor ga(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const Real v = x[i];
        const Real t = n.saved[i];
        const Real dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        ga[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::Tanh: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real t = n.value[i];
        ga[i] = g[i] * (1.0 - t * t);
      }
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::Gather: {
      const Tensor& T = in(0);
      const std::size_t cols = T.cols();
      Tensor gt(T.shape(), 0.0);
      for (std::size_t i = 0; i < n.ids.size(); ++i) {
        Real* dst = gt.data() + static_cast<std::size_t>(n.ids[i]) * cols;
        const Real* src = g.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
      accumulate(grads, n.inputs[0], gt);
      return;
    }
    case Prim::CrossEntropy: {
      const Real up = g[0];
      const std::size_t cols = n.saved.cols();
      Tensor gl(n.saved.shape(), 0.0);
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        const int t = n.ids[r];
        if (t < 0) continue;
        for (std::size_t j = 0; j < cols; ++j)
          gl[r * cols + j] = up * n.saved[r * cols + j];
        gl[r * cols + static_cast<std::size_t>(t)] -= up;
      }
      accumulate(grads, n.inputs[0], gl);
      return;
    }
    case Prim::SliceRows: {
      Tensor ga(in(0).shape(), 0.0);
      const std::size_t cols = ga.cols();
      std::copy(g.data(), g.data() + g.size(), ga.data() + n.begin * cols);
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::SliceCols: {
      Tensor ga(in(0).shape(), 0.0);
      const std::size_t cols = ga.cols();
      const std::size_t w = n.end - n.begin;
      for (std::size_t r = 0; r < ga.rows(); ++r)
        std::copy_n(g.data() + r * w, w, ga.data() + r * cols + n.begin);
      accumulate(grads, n.inputs[0], ga);
      return;
    }
    case Prim::ConcatRows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& P = in(k);
        if (wants(k)) {
          Tensor gp(P.shape());
          std::copy_n(g.data() + off, P.size(), gp.data());
          accumulate(grads, n.inputs[k], gp);
        }
        off += P.size();
      }
      return;
    }
    case Prim::ConcatCols: {
      const std::size_t cols = g.cols();
      std::size_t c0 = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& P = in(k);
        const std::size_t w = P.cols();
        if (wants(k)) {
          Tensor gp(P.shape());
          for (std::size_t r = 0; r < P.rows(); ++r)
            std::copy_n(g.data() + r * cols + c0, w, gp.data() + r * w);
          accumulate(grads, n.inputs[k], gp);
        }
        c0 += w;
      }
      return;
    }
    case Prim::Sum: {
      accumulate(grads, n.inputs[0], Tensor(in(0).shape(), g[0]));
      return;
    }
  }
}

}  // namespace regrelax::nn
