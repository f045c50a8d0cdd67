#pragma once

#include "regrelax/model/transformer.hpp"
#include "regrelax/text/vocab.hpp"

namespace regrelax::model {

// Index of the largest logit, lowest index on ties.
text::TokenId argmax(std::span<const nn::Real> logits);

// Greedy continuation of `ids`. Stops after `max_new` tokens or when `eos`
// is produced; the eos token itself is not returned. Throws if the prompt
// plus the budget does not fit the context.
TokenIds generate(const Transformer& model, const TokenIds& ids, std::size_t max_new,
                  text::TokenId eos = text::Vocab::kEos);

// Same, starting from arbitrary input embeddings (e.g. a continuous suffix);
// generated tokens are appended as their embedding rows.
TokenIds generate_from_embeddings(const Transformer& model, const nn::Tensor& inputs,
                                  std::size_t max_new, text::TokenId eos = text::Vocab::kEos);

}  // namespace regrelax::model
