#include "regrelax/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "regrelax/nn/adam.hpp"
#include "regrelax/text/vocab.hpp"

namespace regrelax::model {
namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;

// Next-token targets for `doc`, -1 where unscored.
std::vector<int> next_token_targets(const TokenIds& doc, bool response_only) {
  std::vector<int> targets(doc.size() - 1, -1);
  std::size_t start = 0;
  if (response_only) {
    const auto it = std::find(doc.begin(), doc.end(), text::Vocab::kAssistant);
    if (it == doc.end()) return targets;
    start = static_cast<std::size_t>(it - doc.begin());
  }
  for (std::size_t i = start; i + 1 < doc.size(); ++i) targets[i] = doc[i + 1];
  return targets;
}

struct DocLoss {
  Var loss;
  std::size_t scored = 0;
};

DocLoss record_doc(Tape& t, const Transformer& model, const BoundParams& p,
                   const TokenIds& doc, bool response_only) {
  const TokenIds inputs(doc.begin(), doc.end() - 1);
  std::vector<int> targets = next_token_targets(doc, response_only);
  DocLoss out;
  out.scored = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int v) { return v >= 0; }));
  Var x = t.gather(p.tok_emb, inputs);
  Var h = model.hidden(t, p, x);
  out.loss = t.cross_entropy(model.logits(t, p, h), std::move(targets));
  return out;
}

nn::Real schedule_lr(const TrainSchedule& s, std::size_t step) {
  if (step < s.warmup) {
    return s.lr * static_cast<nn::Real>(step + 1) / static_cast<nn::Real>(s.warmup);
  }
  const nn::Real span = static_cast<nn::Real>(std::max<std::size_t>(1, s.steps - s.warmup));
  const nn::Real progress = static_cast<nn::Real>(step - s.warmup) / span;
  return s.min_lr + 0.5 * (s.lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

nn::Real document_loss(const Transformer& model, const TokenIds& doc, bool response_only) {
  if (doc.size() < 2) throw std::invalid_argument("document_loss: document too short");
  Tape t;
  const BoundParams p = model.bind(t, false);
  DocLoss dl = record_doc(t, model, p, doc, response_only);
  if (dl.scored == 0) return 0.0;
  return t.value(dl.loss).item() / static_cast<nn::Real>(dl.scored);
}

Transformer train_lm(const Transformer& init, const std::vector<TokenIds>& docs,
                     const TrainSchedule& s, const TrainCallback& on_log) {
  if (docs.empty()) throw std::invalid_argument("train_lm: empty corpus");
  if (s.batch == 0) throw std::invalid_argument("train_lm: batch must be positive");
  for (const TokenIds& d : docs) {
    if (d.size() < 2) throw std::invalid_argument("train_lm: document shorter than 2 tokens");
    if (d.size() - 1 > init.config().context) {
      throw std::invalid_argument("train_lm: document of " + std::to_string(d.size()) +
                                  " tokens exceeds context");
    }
  }

  ModelParams params = init.params();
  std::vector<nn::AdamMoments> moments;
  params.for_each([&](const std::string&, const Tensor& t) { moments.emplace_back(t.shape()); });
  std::vector<bool> decays;
  params.for_each([&](const std::string& name, const Tensor& t) {
    // Matrices decay; gains, biases and position rows do not.
    decays.push_back(t.rank() == 2 && name != "pos_emb");
  });

  std::mt19937_64 rng(s.seed);
  std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);
  const nn::AdamHyper hyper;

  for (std::size_t step = 0; step < s.steps; ++step) {
    const Transformer current(init.config(), params);
    std::vector<Tensor> grads;
    nn::Real loss_sum = 0.0;
    std::size_t scored = 0;

    for (std::size_t b = 0; b < s.batch; ++b) {
      const TokenIds& doc = docs[pick(rng)];
      Tape t;
      const BoundParams p = current.bind(t, true);
      DocLoss dl;
      try {
        dl = record_doc(t, current, p, doc, s.response_only);
      } catch (const nn::NonFiniteError& e) {
        throw TrainingDiverged("train_lm: step " + std::to_string(step) + ": " + e.what());
      }
      if (dl.scored == 0) continue;
      loss_sum += t.value(dl.loss).item();
      scored += dl.scored;
      const std::vector<Var> leaves = p.all();
      std::vector<Tensor> g = t.grad(dl.loss, leaves);
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t k = 0; k < g.size(); ++k)
          for (std::size_t i = 0; i < g[k].size(); ++i) grads[k][i] += g[k][i];
      }
    }
    if (scored == 0) continue;

    const nn::Real inv = 1.0 / static_cast<nn::Real>(scored);
    const nn::Real mean_loss = loss_sum * inv;
    if (!std::isfinite(mean_loss)) {
      throw TrainingDiverged("train_lm: non-finite loss at step " + std::to_string(step));
    }
    nn::Real norm2 = 0.0;
    for (Tensor& g : grads)
      for (nn::Real& v : g.values()) {
        v *= inv;
        norm2 += v * v;
      }
    const nn::Real norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) {
      throw TrainingDiverged("train_lm: non-finite gradient norm at step " +
                             std::to_string(step) + " (loss " + std::to_string(mean_loss) + ")");
    }
    const nn::Real clip_scale = (s.clip > 0.0 && norm > s.clip) ? s.clip / norm : 1.0;

    const nn::Real lr = schedule_lr(s, step);
    std::size_t k = 0;
    params.for_each([&](const std::string&, Tensor& w) {
      Tensor& g = grads[k];
      for (nn::Real& v : g.values()) v *= clip_scale;
      const Tensor dir = moments[k].direction(g, step + 1, hyper);
      const nn::Real wd = decays[k] ? s.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (dir[i] + wd * w[i]);
      ++k;
    });

    if (on_log && s.log_every > 0 && (step % s.log_every == 0 || step + 1 == s.steps)) {
      on_log({step, mean_loss, lr});
    }
  }
  if (!params.all_finite()) throw TrainingDiverged("train_lm: parameters became non-finite");
  return Transformer(init.config(), std::move(params));
}

Transformer align(const Transformer& base, const std::vector<TokenIds>& docs,
                  TrainSchedule schedule, const TrainCallback& on_log) {
  schedule.response_only = true;
  return train_lm(base, docs, schedule, on_log);
}

}  // namespace regrelax::model
