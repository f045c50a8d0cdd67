#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "regrelax/common/kv.hpp"
#include "regrelax/model/loss.hpp"
#include "regrelax/nn/adam.hpp"
#include "regrelax/text/chat.hpp"

namespace regrelax::attack {

using model::PromptLayout;
using model::Transformer;
using nn::Real;
using nn::Tensor;
using text::TokenIds;

enum class Variant { ExplicitL2, DecoupledDecay };
// Auto: plain descent for the explicit-L2 variant, Adam for decoupled decay.
enum class Moments { Auto, On, Off };

struct AttackConfig {
  std::size_t suffix_len = 20;     // m
  std::size_t steps = 250;         // T
  Real learning_rate = 0.1;        // alpha0
  Real lr_decay = 0.99;
  Real weight_decay = 0.05;        // lambda (explicit) or lambda_wd (decoupled)
  Real grad_clip_max_norm = 1.0;   // may be +inf
  Real noise_mean = 0.0;
  Real noise_std = 0.1;
  std::uint64_t seed = 0;
  Variant variant = Variant::ExplicitL2;
  Moments moments = Moments::Auto;

  // Add the step instead of subtracting it (ascent); off means descent.
  bool literal_sign = false;
  // Decoupled decay shrinks toward the origin instead of the mean embedding.
  bool decay_to_origin = false;
  // Discretize the lowest-total-loss iterate instead of the final one.
  bool keep_best = false;
  std::string init_suffix = text::default_suffix_text();
  std::size_t max_new_tokens = 48;

  void validate() const;
  bool uses_moments() const;

  // Reads the keys named in to_kv(); absent keys keep their defaults.
  static AttackConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct StepTrace {
  Real total = 0.0;
  Real ce = 0.0;
  Real reg = 0.0;
  Real grad_norm = 0.0;  // before clipping
  Real lr = 0.0;         // rate used for this step
};

struct AdversarialState {
  Tensor e_adv;  // m×d
  std::size_t t = 0;
  Real lr = 0.0;
  nn::AdamMoments moments;
  std::vector<StepTrace> trace;
};

struct TotalLoss {
  Real total = 0.0;
  Real ce = 0.0;
  Real reg = 0.0;
};

// Everything a step needs that does not change across steps.
struct AttackProblem {
  const Transformer* model = nullptr;
  PromptLayout layout;
  Tensor mean_emb;  // 1×d

  AttackProblem(const Transformer& model, PromptLayout layout);
};

class AttackAborted : public std::runtime_error {
 public:
  AttackAborted(const std::string& msg, std::vector<StepTrace> partial)
      : std::runtime_error(msg), partial_trace(std::move(partial)) {}
  std::vector<StepTrace> partial_trace;
};

AdversarialState init_suffix(const Transformer& model, const std::string& init_text,
                             const AttackConfig& config);

// (lambda/2) Σ_i ‖e_adv[i] − ē‖².
Real mean_pull(const Tensor& e_adv, const Tensor& mean_emb, Real lambda);

TotalLoss rr_total_loss(const AttackProblem& problem, const Tensor& e_adv, Real lambda);

// Gradient of rr_total_loss with respect to e_adv.
model::LossGrad rr_total_loss_grad(const AttackProblem& problem, const Tensor& e_adv,
                                   Real lambda, TotalLoss* parts = nullptr);

// Scales `g` in place to global norm `max_norm` if it exceeds it; returns
// the norm before scaling.
Real clip_global_norm(Tensor& g, Real max_norm);

void rr_step(const AttackProblem& problem, AdversarialState& state, const AttackConfig& config);
void rr_step_decoupled(const AttackProblem& problem, AdversarialState& state,
                       const AttackConfig& config);

// Nearest vocabulary row by squared Euclidean distance, lowest id on ties.
text::TokenId nearest_token(std::span<const Real> row, const Tensor& embedding_matrix);
TokenIds discretize(const Tensor& e_adv, const Tensor& embedding_matrix);
// Mean over rows of the distance to the nearest vocabulary row.
Real mean_nearest_distance(const Tensor& e_adv, const Tensor& embedding_matrix);

struct AttackResult {
  std::string method;
  std::string behavior_id;
  TokenIds suffix;
  std::string suffix_text;
  std::string response;
  // Response generated from the undiscretized suffix, where one exists.
  std::optional<std::string> continuous_response;
  std::vector<StepTrace> trace;
  std::size_t selected_step = 0;  // iterate that was discretized
  Real discrete_ce = 0.0;         // adversarial CE of the discrete suffix
  Tensor final_embeddings;        // continuous iterate that was discretized
  std::vector<double> step_seconds;
  double total_seconds = 0.0;
};

// Greedy response to prompt ‖ suffix ‖ post, decoded to text.
std::string respond(const Transformer& model, const PromptLayout& layout, const TokenIds& suffix,
                    std::size_t max_new_tokens);
std::string respond_continuous(const Transformer& model, const PromptLayout& layout,
                               const Tensor& suffix_embeddings, std::size_t max_new_tokens);

AttackResult run_attack(const Transformer& model, const text::Behavior& behavior,
                        const AttackConfig& config,
                        const text::ChatTemplate& tmpl = text::ChatTemplate{});

// Runs steps on an already-initialized state and fills the result; shared by
// run_attack and the soft-embedding baseline.
AttackResult optimize_embeddings(const AttackProblem& problem, AdversarialState state,
                                 const AttackConfig& config, std::string method);

}  // namespace regrelax::attack
