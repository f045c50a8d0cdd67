#pragma once

#include <span>
#include <vector>

#include "regrelax/model/config.hpp"
#include "regrelax/nn/tape.hpp"
#include "regrelax/text/vocab.hpp"

namespace regrelax::model {

using text::TokenIds;

// Parameters placed on a tape, either as differentiable leaves (training) or
// as constants (attacks, inference).
struct BoundParams {
  struct Layer {
    nn::Var ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
    nn::Var ln2_gain, ln2_bias, fc_weight, fc_bias, proj_weight, proj_bias;
  };
  nn::Var tok_emb, pos_emb;
  std::vector<Layer> layers;
  nn::Var lnf_gain, lnf_bias, head;

  // Leaves in ModelParams::for_each order.
  std::vector<nn::Var> all() const;
};

// Pre-norm causal transformer LM. Immutable once constructed; safe to share
// across threads, each call builds its own tape.
class Transformer {
 public:
  Transformer(ModelConfig config, ModelParams params);

  static Transformer random(const ModelConfig& config, std::uint64_t seed,
                            nn::Real init_std = 0.02);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  const nn::Tensor& embedding_matrix() const { return params_.tok_emb; }

  BoundParams bind(nn::Tape& tape, bool trainable) const;

  // Input embeddings (n×d) -> final normalized hidden states (n×d).
  nn::Var hidden(nn::Tape& tape, const BoundParams& p, nn::Var inputs) const;
  // Hidden rows -> logits over the vocabulary.
  nn::Var logits(nn::Tape& tape, const BoundParams& p, nn::Var hidden_rows) const;

  // Rows of E for `ids`; 0×d for an empty sequence.
  nn::Tensor embed(const TokenIds& ids) const;

  // Full logits (n×V) for an input embedding sequence.
  nn::Tensor forward(const nn::Tensor& input_embeddings) const;
  std::vector<nn::Tensor> forward_batch(std::span<const nn::Tensor> inputs) const;
  nn::Tensor forward_ids(const TokenIds& ids) const { return forward(embed(ids)); }

  // Logits of the last position only.
  std::vector<nn::Real> next_logits(const nn::Tensor& input_embeddings) const;

 private:
  void check_length(std::size_t n) const;

  ModelConfig config_;
  ModelParams params_;
};

// Column means of E: the average token embedding.
nn::Tensor mean_embedding(const nn::Tensor& embedding_matrix);

}  // namespace regrelax::model
