#include "regrelax/model/loss.hpp"

#include <stdexcept>

namespace regrelax::model {

using nn::Tape;
using nn::Tensor;
using nn::Var;

PromptLayout PromptLayout::from_behavior(const text::Vocab& vocab,
                                         const text::ChatTemplate& tmpl,
                                         const text::Behavior& behavior) {
  PromptLayout l;
  l.prompt = vocab.encode(tmpl.user_prefix + behavior.behavior + tmpl.separator);
  l.post = vocab.encode(tmpl.assistant_prefix);
  l.target = vocab.encode(behavior.target);
  return l;
}

TokenIds PromptLayout::render(const TokenIds& suffix) const {
  TokenIds ids = prompt;
  ids.insert(ids.end(), suffix.begin(), suffix.end());
  ids.insert(ids.end(), post.begin(), post.end());
  return ids;
}

Var build_adv_loss(Tape& t, const Transformer& model, const BoundParams& params,
                   const PromptLayout& layout, Var suffix, Reduction reduction) {
  if (layout.target.empty()) throw std::invalid_argument("adv_ce_loss: empty target");
  const std::size_t m = t.value(suffix).rows();
  const std::size_t context_len = layout.prompt.size() + m + layout.post.size();
  if (context_len == 0) {
    throw std::invalid_argument("adv_ce_loss: nothing precedes the first target token");
  }

  TokenIds tail = layout.post;
  tail.insert(tail.end(), layout.target.begin(), layout.target.end() - 1);
  const Var parts[] = {t.constant(model.embed(layout.prompt)), suffix,
                       t.constant(model.embed(tail))};
  Var h = model.hidden(t, params, t.concat_rows(parts));

  const std::size_t p = layout.target.size();
  const std::size_t first = context_len - 1;
  Var rows = t.slice_rows(h, first, first + p);
  Var loss = t.cross_entropy(model.logits(t, params, rows), layout.target);
  if (reduction == Reduction::Mean) loss = t.scale(loss, 1.0 / static_cast<nn::Real>(p));
  return loss;
}

nn::Real adv_ce_loss(const Transformer& model, const PromptLayout& layout,
                     const Tensor& suffix_embeddings, Reduction reduction) {
  Tape t;
  const BoundParams p = model.bind(t, false);
  Var s = t.input_view(suffix_embeddings, false);
  return t.value(build_adv_loss(t, model, p, layout, s, reduction)).item();
}

LossGrad loss_grad_suffix(const Transformer& model, const PromptLayout& layout,
                          const Tensor& suffix_embeddings, Reduction reduction) {
  Tape t;
  const BoundParams p = model.bind(t, false);
  Var s = t.input_view(suffix_embeddings, true);
  Var loss = build_adv_loss(t, model, p, layout, s, reduction);
  const Var wrt[] = {s};
  LossGrad out;
  out.loss = t.value(loss).item();
  out.grad = std::move(t.grad(loss, wrt)[0]);
  return out;
}

nn::Real loss_for_tokens(const Transformer& model, const PromptLayout& layout,
                         const TokenIds& suffix) {
  return adv_ce_loss(model, layout, model.embed(suffix));
}

}  // namespace regrelax::model
