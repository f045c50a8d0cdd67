#include "regrelax/model/generate.hpp"

#include <algorithm>
#include <stdexcept>

namespace regrelax::model {

text::TokenId argmax(std::span<const nn::Real> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<text::TokenId>(best);
}

TokenIds generate_from_embeddings(const Transformer& model, const nn::Tensor& inputs,
                                  std::size_t max_new, text::TokenId eos) {
  const std::size_t d = model.config().d;
  const std::size_t n = inputs.rows();
  if (n == 0) throw std::invalid_argument("generate: empty prompt");
  if (n + max_new > model.config().context) {
    throw std::length_error("generate: prompt of " + std::to_string(n) + " plus " +
                            std::to_string(max_new) + " new tokens exceeds context " +
                            std::to_string(model.config().context));
  }
  nn::Tensor seq({n + max_new, d});
  std::copy(inputs.data(), inputs.data() + inputs.size(), seq.data());
  std::size_t len = n;

  TokenIds out;
  while (out.size() < max_new) {
    nn::Tensor view({len, d}, std::vector<nn::Real>(seq.data(), seq.data() + len * d));
    const text::TokenId next = argmax(model.next_logits(view));
    if (next == eos) break;
    out.push_back(next);
    const auto row = model.embedding_matrix().row(static_cast<std::size_t>(next));
    std::copy(row.begin(), row.end(), seq.data() + len * d);
    ++len;
  }
  return out;
}

TokenIds generate(const Transformer& model, const TokenIds& ids, std::size_t max_new,
                  text::TokenId eos) {
  return generate_from_embeddings(model, model.embed(ids), max_new, eos);
}

}  // namespace regrelax::model
