#include "regrelax/model/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace regrelax::model {

using nn::Tape;
using nn::Tensor;
using nn::Var;

std::vector<Var> BoundParams::all() const {
  std::vector<Var> out = {tok_emb, pos_emb};
  for (const Layer& l : layers) {
    out.insert(out.end(), {l.ln1_gain, l.ln1_bias, l.qkv_weight, l.qkv_bias, l.out_weight,
                           l.out_bias, l.ln2_gain, l.ln2_bias, l.fc_weight, l.fc_bias,
                           l.proj_weight, l.proj_bias});
  }
  out.push_back(lnf_gain);
  out.push_back(lnf_bias);
  if (head.id != tok_emb.id) out.push_back(head);
  return out;
}

Transformer::Transformer(ModelConfig config, ModelParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (params_.tok_emb.shape() != nn::Shape{config_.vocab, config_.d}) {
    throw std::invalid_argument("transformer: embedding matrix shape " +
                                nn::shape_str(params_.tok_emb.shape()) +
                                " does not match config");
  }
  if (params_.layers.size() != config_.layers) {
    throw std::invalid_argument("transformer: layer count does not match config");
  }
  if (config_.tie_head != params_.head.shape().empty()) {
    throw std::invalid_argument("transformer: head tying does not match config");
  }
  if (!params_.all_finite()) throw std::invalid_argument("transformer: non-finite parameters");
}

Transformer Transformer::random(const ModelConfig& config, std::uint64_t seed,
                                nn::Real init_std) {
  return Transformer(config, ModelParams::random(config, seed, init_std));
}

BoundParams Transformer::bind(Tape& tape, bool trainable) const {
  auto put = [&](const Tensor& t) { return tape.input_view(t, trainable); };
  BoundParams b;
  b.tok_emb = put(params_.tok_emb);
  b.pos_emb = put(params_.pos_emb);
  for (const LayerParams& l : params_.layers) {
    BoundParams::Layer bl;
    bl.ln1_gain = put(l.ln1_gain);
    bl.ln1_bias = put(l.ln1_bias);
    bl.qkv_weight = put(l.qkv_weight);
    bl.qkv_bias = put(l.qkv_bias);
    bl.out_weight = put(l.out_weight);
    bl.out_bias = put(l.out_bias);
    bl.ln2_gain = put(l.ln2_gain);
    bl.ln2_bias = put(l.ln2_bias);
    bl.fc_weight = put(l.fc_weight);
    bl.fc_bias = put(l.fc_bias);
    bl.proj_weight = put(l.proj_weight);
    bl.proj_bias = put(l.proj_bias);
    b.layers.push_back(bl);
  }
  b.lnf_gain = put(params_.lnf_gain);
  b.lnf_bias = put(params_.lnf_bias);
  b.head = config_.tie_head ? b.tok_emb : put(params_.head);
  return b;
}

void Transformer::check_length(std::size_t n) const {
  if (n > config_.context) {
    throw std::length_error("transformer: sequence of " + std::to_string(n) +
                            " exceeds context " + std::to_string(config_.context));
  }
}

Var Transformer::hidden(Tape& t, const BoundParams& p, Var inputs) const {
  const std::size_t n = t.value(inputs).rows();
  check_length(n);
  if (t.value(inputs).cols() != config_.d) {
    throw nn::ShapeError("transformer: input width " +
                         std::to_string(t.value(inputs).cols()) + " != d");
  }
  const std::size_t d = config_.d;
  const std::size_t hd = config_.head_dim();
  const nn::Real attn_scale = 1.0 / std::sqrt(static_cast<nn::Real>(hd));

  Var x = t.add(inputs, t.slice_rows(p.pos_emb, 0, n));
  std::vector<Var> heads(config_.heads);
  for (const BoundParams::Layer& l : p.layers) {
    Var h = t.layer_norm(x, l.ln1_gain, l.ln1_bias);
    Var qkv = t.add_row(t.matmul(h, l.qkv_weight), l.qkv_bias);
    for (std::size_t k = 0; k < config_.heads; ++k) {
      Var q = t.slice_cols(qkv, k * hd, (k + 1) * hd);
      Var kk = t.slice_cols(qkv, d + k * hd, d + (k + 1) * hd);
      Var v = t.slice_cols(qkv, 2 * d + k * hd, 2 * d + (k + 1) * hd);
      Var scores = t.scale(t.matmul(q, kk, false, true), attn_scale);
      heads[k] = t.matmul(t.softmax(scores, /*causal=*/true), v);
    }
    Var attn = t.add_row(t.matmul(t.concat_cols(heads), l.out_weight), l.out_bias);
    x = t.add(x, attn);
    Var h2 = t.layer_norm(x, l.ln2_gain, l.ln2_bias);
    Var f = t.gelu(t.add_row(t.matmul(h2, l.fc_weight), l.fc_bias));
    x = t.add(x, t.add_row(t.matmul(f, l.proj_weight), l.proj_bias));
  }
  return t.layer_norm(x, p.lnf_gain, p.lnf_bias);
}

Var Transformer::logits(Tape& t, const BoundParams& p, Var hidden_rows) const {
  return t.matmul(hidden_rows, p.head, false, true);
}

Tensor Transformer::embed(const TokenIds& ids) const {
  const std::size_t d = config_.d;
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config_.vocab) {
      throw std::out_of_range("embed: token id " + std::to_string(ids[i]) +
                              " outside vocabulary of " + std::to_string(config_.vocab));
    }
    const auto row = params_.tok_emb.row(static_cast<std::size_t>(ids[i]));
    std::copy(row.begin(), row.end(), out.data() + i * d);
  }
  return out;
}

Tensor Transformer::forward(const Tensor& input_embeddings) const {
  Tape t;
  const BoundParams p = bind(t, false);
  Var x = t.constant(input_embeddings);
  return t.value(logits(t, p, hidden(t, p, x)));
}

std::vector<Tensor> Transformer::forward_batch(std::span<const Tensor> inputs) const {
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Tensor& x : inputs) out.push_back(forward(x));
  return out;
}

std::vector<nn::Real> Transformer::next_logits(const Tensor& input_embeddings) const {
  const std::size_t n = input_embeddings.rows();
  if (n == 0) throw std::invalid_argument("next_logits: empty input");
  Tape t;
  const BoundParams p = bind(t, false);
  Var h = hidden(t, p, t.constant(input_embeddings));
  const Tensor& out = t.value(logits(t, p, t.slice_rows(h, n - 1, n)));
  return out.values();
}

Tensor mean_embedding(const Tensor& e) {
  const std::size_t rows = e.rows();
  const std::size_t cols = e.cols();
  Tensor mean({cols}, 0.0);
  if (rows == 0) return mean;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) mean[j] += e.at(r, j);
  for (std::size_t j = 0; j < cols; ++j) mean[j] /= static_cast<nn::Real>(rows);
  return mean;
}

}  // namespace regrelax::model
