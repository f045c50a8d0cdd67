#pragma once

#include "regrelax/model/transformer.hpp"
#include "regrelax/text/chat.hpp"

namespace regrelax::model {

// Token layout around the adversarial suffix slot:
//   prompt ‖ suffix ‖ post ‖ target
// The target is teacher forced: its tokens (minus the last) are inputs and
// each y_t is predicted from the position right before it.
struct PromptLayout {
  TokenIds prompt;
  TokenIds post;
  TokenIds target;

  static PromptLayout from_behavior(const text::Vocab& vocab, const text::ChatTemplate& tmpl,
                                    const text::Behavior& behavior);

  // prompt ‖ suffix ‖ post, ready for generation.
  TokenIds render(const TokenIds& suffix) const;
};

enum class Reduction { Sum, Mean };

// Records the adversarial cross-entropy −Σ_t log P(y_t | prompt ‖ suffix ‖
// post ‖ y_<t) on `tape`. `suffix` is an m×d embedding node.
nn::Var build_adv_loss(nn::Tape& tape, const Transformer& model, const BoundParams& params,
                       const PromptLayout& layout, nn::Var suffix,
                       Reduction reduction = Reduction::Sum);

nn::Real adv_ce_loss(const Transformer& model, const PromptLayout& layout,
                     const nn::Tensor& suffix_embeddings, Reduction reduction = Reduction::Sum);

struct LossGrad {
  nn::Real loss = 0.0;
  nn::Tensor grad;  // m×d
};

// Loss and its gradient with respect to the suffix embeddings only.
LossGrad loss_grad_suffix(const Transformer& model, const PromptLayout& layout,
                          const nn::Tensor& suffix_embeddings,
                          Reduction reduction = Reduction::Sum);

// Loss with the suffix given as vocabulary tokens.
nn::Real loss_for_tokens(const Transformer& model, const PromptLayout& layout,
                         const TokenIds& suffix);

}  // namespace regrelax::model
