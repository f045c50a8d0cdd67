#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "regrelax/nn/tensor.hpp"

namespace regrelax::model {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t context = 256;
  std::size_t vocab = 102;
  bool tie_head = true;

  void validate() const;
  std::size_t head_dim() const { return d / heads; }

  // "key=value" lines, fixed key order.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  nn::Tensor ln1_gain, ln1_bias;
  nn::Tensor qkv_weight, qkv_bias;  // d×3d, 3d
  nn::Tensor out_weight, out_bias;  // d×d, d
  nn::Tensor ln2_gain, ln2_bias;
  nn::Tensor fc_weight, fc_bias;    // d×ff, ff
  nn::Tensor proj_weight, proj_bias;  // ff×d, d
};

struct ModelParams {
  nn::Tensor tok_emb;  // V×d, the embedding matrix E
  nn::Tensor pos_emb;  // context×d
  std::vector<LayerParams> layers;
  nn::Tensor lnf_gain, lnf_bias;
  nn::Tensor head;  // V×d; empty when tied to tok_emb

  // Visits every tensor with its checkpoint name, in a fixed order.
  void for_each(const std::function<void(const std::string&, nn::Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const nn::Tensor&)>& fn) const;

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams random(const ModelConfig& cfg, std::uint64_t seed, nn::Real init_std = 0.02);

  bool all_finite() const;
  // Rounds every value to the nearest 32-bit float, the checkpoint precision.
  void round_to_f32();

  bool operator==(const ModelParams&) const = default;
};

}  // namespace regrelax::model
