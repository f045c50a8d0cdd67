#pragma once

#include <random>
#include <span>
#include <vector>

#include "regrelax/attack/attack.hpp"

namespace regrelax::baselines {

using attack::AttackResult;
using model::PromptLayout;
using model::Transformer;
using nn::Real;
using nn::Tensor;
using text::TokenIds;

// Plain gradient descent on the adversarial CE, then nearest-row
// discretization. Runs through the same optimizer as RR with lambda = 0,
// no clipping, no decay and no init noise.
attack::AttackConfig soft_config(Real step_size = 0.1, std::size_t steps = 250,
                                 std::size_t suffix_len = 20);
AttackResult soft_attack(const Transformer& model, const text::Behavior& behavior,
                         Real step_size = 0.1, std::size_t steps = 250,
                         const text::ChatTemplate& tmpl = text::ChatTemplate{});

struct GcgConfig {
  std::size_t top_k = 256;  // clamped to the vocabulary size
  std::size_t search_width = 512;
  std::size_t steps = 250;
  std::size_t suffix_len = 20;
  std::uint64_t seed = 0;
  std::string init_suffix = text::default_suffix_text();
  std::size_t max_new_tokens = 48;

  void validate() const;
  static GcgConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

// d CE / d one-hot rows: grad_emb · Eᵀ (m×V).
Tensor one_hot_gradient(const Tensor& grad_emb, const Tensor& embedding_matrix);

// Per row, the k token ids with the most negative gradient, lowest id first
// among equal values.
std::vector<TokenIds> top_k_tokens(const Tensor& one_hot_grad, std::size_t k);

struct Substitution {
  std::size_t position = 0;
  text::TokenId token = 0;
  bool operator==(const Substitution&) const = default;
};

// Candidate single-token substitutions for one step. Positions are drawn
// uniformly, then a token uniformly from that position's list; repeats are
// dropped. When search_width covers every (position, token) pair, all pairs
// are returned in position-major order instead.
std::vector<Substitution> sample_substitutions(const std::vector<TokenIds>& top_k,
                                               std::size_t search_width, std::mt19937_64& rng);

struct GcgStep {
  TokenIds tokens;
  Real loss = 0.0;
  std::vector<Substitution> candidates;
  std::vector<Real> candidate_losses;
};

// One greedy coordinate gradient step: the candidate with minimum CE, the
// first sampled among equals.
GcgStep gcg_step(const Transformer& model, const PromptLayout& layout, const TokenIds& suffix,
                 const GcgConfig& config, std::mt19937_64& rng);

// Runs config.steps GCG steps and keeps the lowest-loss suffix seen.
AttackResult gcg_attack(const Transformer& model, const text::Behavior& behavior,
                        const GcgConfig& config,
                        const text::ChatTemplate& tmpl = text::ChatTemplate{});

// Euclidean projection onto {p : p >= 0, Σp = 1} by sort-and-threshold.
std::vector<Real> simplex_project(std::span<const Real> v);
void project_rows(Tensor& s);

struct PgdConfig {
  Real step_size = 1e-2;
  Real min_step_size = 1e-4;  // cosine annealing floor
  Real adam_eps = 1e-4;
  Real grad_clip_max_norm = 1.0;
  std::size_t steps = 250;
  std::size_t suffix_len = 20;
  std::uint64_t seed = 0;
  // Empty: random relaxed rows. Otherwise one-hot rows of these tokens.
  std::string init_suffix;
  std::size_t max_new_tokens = 48;

  void validate() const;
  static PgdConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

// Random rows drawn uniformly and normalized onto the simplex.
Tensor random_relaxed_rows(std::size_t m, std::size_t vocab, std::uint64_t seed);
Tensor one_hot_rows(const TokenIds& ids, std::size_t vocab);
// Per-row argmax, lowest id on ties.
TokenIds argmax_rows(const Tensor& s);

struct PgdState {
  Tensor s;  // m×V
  std::size_t t = 0;
  nn::AdamMoments moments;
};

void pgd_step(const Transformer& model, const PromptLayout& layout, PgdState& state,
              const PgdConfig& config, attack::StepTrace* trace = nullptr);

AttackResult pgd_attack(const Transformer& model, const text::Behavior& behavior,
                        const PgdConfig& config,
                        const text::ChatTemplate& tmpl = text::ChatTemplate{});

}  // namespace regrelax::baselines
