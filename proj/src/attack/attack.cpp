#include "regrelax/attack/attack.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "regrelax/model/generate.hpp"

namespace regrelax::attack {
namespace {

using Clock = std::chrono::steady_clock;

const text::Vocab& vocab() {
  static const text::Vocab v;
  return v;
}

void check_finite(const Tensor& g, const AdversarialState& s, const char* what) {
  if (g.all_finite()) return;
  throw AttackAborted(std::string(what) + ": non-finite gradient at step " + std::to_string(s.t) +
                          " (lr " + std::to_string(s.lr) + ")",
                      s.trace);
}

template <class F>
model::LossGrad guarded(const AdversarialState& s, const char* what, F&& f) {
  try {
    return f();
  } catch (const nn::NonFiniteError& e) {
    throw AttackAborted(std::string(what) + ": step " + std::to_string(s.t) + ": " + e.what(), s.trace);
  }
}

// Descent along `dir`, or ascent under the literal sign.
void apply_direction(AdversarialState& s, const Tensor& dir, const AttackConfig& c) {
  const Real sign = c.literal_sign ? 1.0 : -1.0;
  for (std::size_t i = 0; i < s.e_adv.size(); ++i) s.e_adv[i] += sign * s.lr * dir[i];
}

}  // namespace

void AttackConfig::validate() const {
  if (suffix_len < 1) throw ConfigError("suffix_len must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive and finite");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (!(grad_clip_max_norm > 0.0)) throw ConfigError("grad_clip_max_norm must be > 0");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be >= 0");
  if (!std::isfinite(noise_mean)) throw ConfigError("noise_mean must be finite");
}

bool AttackConfig::uses_moments() const {
  if (moments == Moments::Auto) return variant == Variant::DecoupledDecay;
  return moments == Moments::On;
}

std::string variant_name(Variant v) {
  return v == Variant::ExplicitL2 ? "explicit-l2" : "decoupled-decay";
}

Variant parse_variant(const std::string& s) {
  if (s == "explicit-l2") return Variant::ExplicitL2;
  if (s == "decoupled-decay") return Variant::DecoupledDecay;
  throw ConfigError("unknown variant '" + s + "' (explicit-l2 | decoupled-decay)");
}

AttackConfig AttackConfig::from_kv(const KeyValues& kv) {
  AttackConfig c;
  c.suffix_len = kv_uint(kv, "suffix_len", c.suffix_len);
  c.steps = kv_uint(kv, "steps", c.steps);
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.lr_decay = kv_double(kv, "lr_decay", c.lr_decay);
  c.weight_decay = kv_double(kv, "weight_decay", c.weight_decay);
  c.grad_clip_max_norm = kv_double(kv, "grad_clip_max_norm", c.grad_clip_max_norm);
  c.noise_mean = kv_double(kv, "noise_mean", c.noise_mean);
  c.noise_std = kv_double(kv, "noise_std", c.noise_std);
  c.seed = kv_uint(kv, "seed", c.seed);
  c.variant = parse_variant(kv_string(kv, "variant", variant_name(c.variant)));
  const std::string mom = kv_string(kv, "moments", "auto");
  if (mom == "auto") c.moments = Moments::Auto;
  else if (mom == "on") c.moments = Moments::On;
  else if (mom == "off") c.moments = Moments::Off;
  else throw ConfigError("config key moments: expected auto | on | off");
  c.literal_sign = kv_bool(kv, "literal_sign", c.literal_sign);
  c.decay_to_origin = kv_bool(kv, "decay_to_origin", c.decay_to_origin);
  c.keep_best = kv_bool(kv, "keep_best", c.keep_best);
  c.init_suffix = kv_string(kv, "init_suffix", text::default_suffix_text(c.suffix_len));
  c.max_new_tokens = kv_uint(kv, "max_new_tokens", c.max_new_tokens);
  c.validate();
  return c;
}

KeyValues AttackConfig::to_kv() const {
  const char* mom = moments == Moments::Auto ? "auto" : moments == Moments::On ? "on" : "off";
  return {
      {"suffix_len", std::to_string(suffix_len)},
      {"steps", std::to_string(steps)},
      {"learning_rate", format_double(learning_rate)},
      {"lr_decay", format_double(lr_decay)},
      {"weight_decay", format_double(weight_decay)},
      {"grad_clip_max_norm", format_double(grad_clip_max_norm)},
      {"noise_mean", format_double(noise_mean)},
      {"noise_std", format_double(noise_std)},
      {"seed", std::to_string(seed)},
      {"variant", variant_name(variant)},
      {"moments", mom},
      {"literal_sign", literal_sign ? "true" : "false"},
      {"decay_to_origin", decay_to_origin ? "true" : "false"},
      {"keep_best", keep_best ? "true" : "false"},
      {"init_suffix", init_suffix},
      {"max_new_tokens", std::to_string(max_new_tokens)},
  };
}

AttackProblem::AttackProblem(const Transformer& m, PromptLayout l)
    : model(&m), layout(std::move(l)), mean_emb(model::mean_embedding(m.embedding_matrix())) {}

AdversarialState init_suffix(const Transformer& model, const std::string& init_text,
                             const AttackConfig& config) {
  config.validate();
  const TokenIds ids = vocab().encode_suffix(init_text);
  if (ids.size() != config.suffix_len) {
    throw std::invalid_argument("init_suffix: '" + init_text + "' has " +
                                std::to_string(ids.size()) + " tokens, suffix_len is " +
                                std::to_string(config.suffix_len));
  }
  AdversarialState s;
  s.e_adv = model.embed(ids);
  if (config.noise_std > 0.0 || config.noise_mean != 0.0) {
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<Real> noise(0.0, 1.0);
    for (Real& v : s.e_adv.values()) v += config.noise_mean + config.noise_std * noise(rng);
  }
  s.lr = config.learning_rate;
  s.moments = nn::AdamMoments(s.e_adv.shape());
  return s;
}

Real mean_pull(const Tensor& e_adv, const Tensor& mean_emb, Real lambda) {
  Real sum = 0.0;
  for (std::size_t i = 0; i < e_adv.rows(); ++i) sum += nn::squared_distance(e_adv.row(i), mean_emb.row(0));
  return 0.5 * lambda * sum;
}

TotalLoss rr_total_loss(const AttackProblem& p, const Tensor& e_adv, Real lambda) {
  TotalLoss out;
  out.ce = model::adv_ce_loss(*p.model, p.layout, e_adv);
  out.reg = mean_pull(e_adv, p.mean_emb, lambda);
  out.total = out.ce + out.reg;
  return out;
}

model::LossGrad rr_total_loss_grad(const AttackProblem& p, const Tensor& e_adv, Real lambda,
                                   TotalLoss* parts) {
  model::LossGrad lg = model::loss_grad_suffix(*p.model, p.layout, e_adv);
  const Real reg = mean_pull(e_adv, p.mean_emb, lambda);
  const std::size_t d = e_adv.cols();
  for (std::size_t i = 0; i < e_adv.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      lg.grad.at(i, j) += lambda * (e_adv.at(i, j) - p.mean_emb[j]);
  if (parts) *parts = {lg.loss + reg, lg.loss, reg};
  lg.loss += reg;
  return lg;
}

Real clip_global_norm(Tensor& g, Real max_norm) {
  const Real norm = nn::l2_norm(g.values());
  if (norm > max_norm) {
    const Real scale = max_norm / norm;
    for (Real& v : g.values()) v *= scale;
  }
  return norm;
}

void rr_step(const AttackProblem& p, AdversarialState& s, const AttackConfig& c) {
  if (s.t >= c.steps) throw std::logic_error("rr_step: already at step T");
  TotalLoss parts;
  model::LossGrad lg =
      guarded(s, "rr_step", [&] { return rr_total_loss_grad(p, s.e_adv, c.weight_decay, &parts); });
  check_finite(lg.grad, s, "rr_step");
  const Real norm = clip_global_norm(lg.grad, c.grad_clip_max_norm);
  const Tensor dir = c.uses_moments() ? s.moments.direction(lg.grad, s.t + 1, nn::AdamHyper{})
                                      : lg.grad;
  apply_direction(s, dir, c);
  s.trace.push_back({parts.total, parts.ce, parts.reg, norm, s.lr});
  ++s.t;
  s.lr = c.learning_rate * std::pow(c.lr_decay, static_cast<Real>(s.t));
}

void rr_step_decoupled(const AttackProblem& p, AdversarialState& s, const AttackConfig& c) {
  if (s.t >= c.steps) throw std::logic_error("rr_step_decoupled: already at step T");
  model::LossGrad lg = guarded(s, "rr_step_decoupled",
                               [&] { return model::loss_grad_suffix(*p.model, p.layout, s.e_adv); });
  check_finite(lg.grad, s, "rr_step_decoupled");
  const Real reg = mean_pull(s.e_adv, p.mean_emb, c.weight_decay);
  const Real norm = clip_global_norm(lg.grad, c.grad_clip_max_norm);
  const Tensor dir = c.uses_moments() ? s.moments.direction(lg.grad, s.t + 1, nn::AdamHyper{})
                                      : lg.grad;

  // Shrink uses the pre-update iterate, as in AdamW.
  const Tensor before = s.e_adv;
  apply_direction(s, dir, c);
  const std::size_t d = s.e_adv.cols();
  for (std::size_t i = 0; i < s.e_adv.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const Real anchor = c.decay_to_origin ? 0.0 : p.mean_emb[j];
      s.e_adv.at(i, j) -= s.lr * c.weight_decay * (before.at(i, j) - anchor);
    }
  s.trace.push_back({lg.loss + reg, lg.loss, reg, norm, s.lr});
  ++s.t;
  s.lr = c.learning_rate * std::pow(c.lr_decay, static_cast<Real>(s.t));
}

text::TokenId nearest_token(std::span<const Real> row, const Tensor& E) {
  text::TokenId best = 0;
  Real best_d = std::numeric_limits<Real>::infinity();
  for (std::size_t v = 0; v < E.rows(); ++v) {
    const Real d = nn::squared_distance(row, E.row(v));
    if (d < best_d) {
      best_d = d;
      best = static_cast<text::TokenId>(v);
    }
  }
  return best;
}

TokenIds discretize(const Tensor& e_adv, const Tensor& E) {
  if (e_adv.size() > 0 && e_adv.cols() != E.cols()) {
    throw nn::ShapeError("discretize: suffix width " + std::to_string(e_adv.cols()) +
                         " != embedding width " + std::to_string(E.cols()));
  }
  TokenIds out;
  out.reserve(e_adv.rows());
  for (std::size_t i = 0; i < e_adv.rows(); ++i) out.push_back(nearest_token(e_adv.row(i), E));
  return out;
}

Real mean_nearest_distance(const Tensor& e_adv, const Tensor& E) {
  if (e_adv.rows() == 0) return 0.0;
  Real sum = 0.0;
  for (std::size_t i = 0; i < e_adv.rows(); ++i) {
    const text::TokenId t = nearest_token(e_adv.row(i), E);
    sum += std::sqrt(nn::squared_distance(e_adv.row(i), E.row(static_cast<std::size_t>(t))));
  }
  return sum / static_cast<Real>(e_adv.rows());
}

std::string respond(const Transformer& model, const PromptLayout& layout, const TokenIds& suffix,
                    std::size_t max_new_tokens) {
  return vocab().decode(model::generate(model, layout.render(suffix), max_new_tokens));
}

std::string respond_continuous(const Transformer& model, const PromptLayout& layout,
                               const Tensor& suffix_embeddings, std::size_t max_new_tokens) {
  const Tensor pre = model.embed(layout.prompt);
  const Tensor post = model.embed(layout.post);
  const std::size_t d = model.config().d;
  Tensor inputs({pre.rows() + suffix_embeddings.rows() + post.rows(), d});
  std::size_t r = 0;
  for (const Tensor* part : {&pre, &suffix_embeddings, &post})
    for (std::size_t i = 0; i < part->rows(); ++i, ++r)
      std::copy(part->row(i).begin(), part->row(i).end(), inputs.row(r).begin());
  return vocab().decode(model::generate_from_embeddings(model, inputs, max_new_tokens));
}

AttackResult optimize_embeddings(const AttackProblem& p, AdversarialState state,
                                 const AttackConfig& c, std::string method) {
  AttackResult r;
  r.method = std::move(method);
  const auto start = Clock::now();

  Tensor best = state.e_adv;
  Real best_loss = std::numeric_limits<Real>::infinity();
  std::size_t best_step = 0;
  while (state.t < c.steps) {
    const Tensor before = c.keep_best ? state.e_adv : Tensor{};
    const auto t0 = Clock::now();
    if (c.variant == Variant::DecoupledDecay) {
      rr_step_decoupled(p, state, c);
    } else {
      rr_step(p, state, c);
    }
    r.step_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    // The trace entry of step t scores the iterate before its update.
    if (c.keep_best && state.trace.back().total < best_loss) {
      best_loss = state.trace.back().total;
      best = before;
      best_step = state.t - 1;
    }
  }

  r.trace = std::move(state.trace);
  if (c.keep_best) {
    r.final_embeddings = std::move(best);
    r.selected_step = best_step;
  } else {
    r.final_embeddings = std::move(state.e_adv);
    r.selected_step = c.steps;
  }
  const Transformer& model = *p.model;
  r.suffix = discretize(r.final_embeddings, model.embedding_matrix());
  r.suffix_text = vocab().decode(r.suffix);
  r.discrete_ce = model::loss_for_tokens(model, p.layout, r.suffix);
  r.response = respond(model, p.layout, r.suffix, c.max_new_tokens);
  r.continuous_response = respond_continuous(model, p.layout, r.final_embeddings, c.max_new_tokens);
  r.total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

AttackResult run_attack(const Transformer& model, const text::Behavior& behavior,
                        const AttackConfig& config, const text::ChatTemplate& tmpl) {
  const AttackProblem problem(model, PromptLayout::from_behavior(vocab(), tmpl, behavior));
  AdversarialState state = init_suffix(model, config.init_suffix, config);
  AttackResult r = optimize_embeddings(
      problem, std::move(state), config,
      config.variant == Variant::DecoupledDecay ? "rr-decoupled" : "rr");
  r.behavior_id = behavior.id;
  return r;
}

}  // namespace regrelax::attack
