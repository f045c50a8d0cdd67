#include "regrelax/baselines/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "regrelax/model/generate.hpp"

namespace regrelax::baselines {
namespace {

using Clock = std::chrono::steady_clock;
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const text::Vocab& vocab() {
  static const text::Vocab v;
  return v;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  Tensor out({a.rows(), trans_b ? b.rows() : b.cols()});
  Eigen::Map<RowMat> o(out.data(), static_cast<Eigen::Index>(out.rows()),
                       static_cast<Eigen::Index>(out.cols()));
  if (trans_b) {
    o.noalias() = view(a) * view(b).transpose();
  } else {
    o.noalias() = view(a) * view(b);
  }
  return out;
}

TokenIds init_tokens(const std::string& text, std::size_t m) {
  TokenIds ids = vocab().encode_suffix(text);
  if (ids.size() != m) {
    throw std::invalid_argument("init suffix '" + text + "' has " + std::to_string(ids.size()) +
                                " tokens, suffix_len is " + std::to_string(m));
  }
  return ids;
}

void finish(AttackResult& r, const Transformer& model, const PromptLayout& layout,
            std::size_t max_new) {
  r.suffix_text = vocab().decode(r.suffix);
  r.discrete_ce = model::loss_for_tokens(model, layout, r.suffix);
  r.response = attack::respond(model, layout, r.suffix, max_new);
}

}  // namespace

attack::AttackConfig soft_config(Real step_size, std::size_t steps, std::size_t suffix_len) {
  attack::AttackConfig c;
  c.suffix_len = suffix_len;
  c.steps = steps;
  c.learning_rate = step_size;
  c.lr_decay = 1.0;
  c.weight_decay = 0.0;
  c.grad_clip_max_norm = std::numeric_limits<Real>::infinity();
  c.noise_mean = 0.0;
  c.noise_std = 0.0;
  c.variant = attack::Variant::ExplicitL2;
  c.moments = attack::Moments::Off;
  c.init_suffix = text::default_suffix_text(suffix_len);
  return c;
}

AttackResult soft_attack(const Transformer& model, const text::Behavior& behavior,
                         Real step_size, std::size_t steps, const text::ChatTemplate& tmpl) {
  const attack::AttackConfig c = soft_config(step_size, steps);
  const attack::AttackProblem problem(model,
                                      PromptLayout::from_behavior(vocab(), tmpl, behavior));
  AttackResult r = attack::optimize_embeddings(
      problem, attack::init_suffix(model, c.init_suffix, c), c, "soft");
  r.behavior_id = behavior.id;
  return r;
}

// ---- GCG ----

void GcgConfig::validate() const {
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (search_width < 1) throw ConfigError("search_width must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (suffix_len < 1) throw ConfigError("suffix_len must be >= 1");
}

GcgConfig GcgConfig::from_kv(const KeyValues& kv) {
  GcgConfig c;
  c.top_k = kv_uint(kv, "top_k", c.top_k);
  c.search_width = kv_uint(kv, "search_width", c.search_width);
  c.steps = kv_uint(kv, "steps", c.steps);
  c.suffix_len = kv_uint(kv, "suffix_len", c.suffix_len);
  c.seed = kv_uint(kv, "seed", c.seed);
  c.init_suffix = kv_string(kv, "init_suffix", text::default_suffix_text(c.suffix_len));
  c.max_new_tokens = kv_uint(kv, "max_new_tokens", c.max_new_tokens);
  c.validate();
  return c;
}

KeyValues GcgConfig::to_kv() const {
  return {{"top_k", std::to_string(top_k)},
          {"search_width", std::to_string(search_width)},
          {"steps", std::to_string(steps)},
          {"suffix_len", std::to_string(suffix_len)},
          {"seed", std::to_string(seed)},
          {"init_suffix", init_suffix},
          {"max_new_tokens", std::to_string(max_new_tokens)}};
}

Tensor one_hot_gradient(const Tensor& grad_emb, const Tensor& E) {
  return matmul(grad_emb, E, true);
}

std::vector<TokenIds> top_k_tokens(const Tensor& g, std::size_t k) {
  k = std::min(k, g.cols());
  std::vector<TokenIds> out(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    TokenIds ids(g.cols());
    std::iota(ids.begin(), ids.end(), 0);
    const auto row = g.row(i);
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](text::TokenId a, text::TokenId b) {
                        const Real ga = row[static_cast<std::size_t>(a)];
                        const Real gb = row[static_cast<std::size_t>(b)];
                        return ga < gb || (ga == gb && a < b);
                      });
    ids.resize(k);
    out[i] = std::move(ids);
  }
  return out;
}

std::vector<Substitution> sample_substitutions(const std::vector<TokenIds>& top_k,
                                               std::size_t search_width, std::mt19937_64& rng) {
  std::vector<Substitution> out;
  std::size_t total = 0;
  for (const TokenIds& list : top_k) total += list.size();
  if (search_width >= total) {
    for (std::size_t p = 0; p < top_k.size(); ++p)
      for (text::TokenId tok : top_k[p]) {
        const Substitution s{p, tok};
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
      }
    return out;
  }
  std::set<std::pair<std::size_t, text::TokenId>> seen;
  std::uniform_int_distribution<std::size_t> pos(0, top_k.size() - 1);
  for (std::size_t j = 0; j < search_width; ++j) {
    const std::size_t p = pos(rng);
    std::uniform_int_distribution<std::size_t> pick(0, top_k[p].size() - 1);
    const Substitution s{p, top_k[p][pick(rng)]};
    if (seen.emplace(s.position, s.token).second) out.push_back(s);
  }
  return out;
}

GcgStep gcg_step(const Transformer& model, const PromptLayout& layout, const TokenIds& suffix,
                 const GcgConfig& config, std::mt19937_64& rng) {
  config.validate();
  const Tensor& E = model.embedding_matrix();
  const model::LossGrad lg = model::loss_grad_suffix(model, layout, model.embed(suffix));
  const auto lists = top_k_tokens(one_hot_gradient(lg.grad, E), config.top_k);

  GcgStep out;
  out.candidates = sample_substitutions(lists, config.search_width, rng);
  out.loss = std::numeric_limits<Real>::infinity();
  for (const Substitution& s : out.candidates) {
    TokenIds cand = suffix;
    cand[s.position] = s.token;
    const Real loss = model::loss_for_tokens(model, layout, cand);
    out.candidate_losses.push_back(loss);
    if (loss < out.loss || out.tokens.empty()) {
      out.loss = loss;
      out.tokens = std::move(cand);
    }
  }
  return out;
}

AttackResult gcg_attack(const Transformer& model, const text::Behavior& behavior,
                        const GcgConfig& config, const text::ChatTemplate& tmpl) {
  config.validate();
  const PromptLayout layout = PromptLayout::from_behavior(vocab(), tmpl, behavior);
  AttackResult r;
  r.method = "gcg";
  r.behavior_id = behavior.id;
  const auto start = Clock::now();

  std::mt19937_64 rng(config.seed);
  TokenIds current = init_tokens(config.init_suffix, config.suffix_len);
  TokenIds best = current;
  Real best_loss = model::loss_for_tokens(model, layout, current);
  for (std::size_t t = 0; t < config.steps; ++t) {
    const auto t0 = Clock::now();
    GcgStep step = gcg_step(model, layout, current, config, rng);
    r.step_seconds.push_back(seconds_since(t0));
    r.trace.push_back({step.loss, step.loss, 0.0, 0.0, 0.0});
    current = std::move(step.tokens);
    if (step.loss < best_loss) {
      best_loss = step.loss;
      best = current;
      r.selected_step = t + 1;
    }
  }
  r.suffix = std::move(best);
  r.final_embeddings = model.embed(r.suffix);
  finish(r, model, layout, config.max_new_tokens);
  r.total_seconds = seconds_since(start);
  return r;
}

// ---- PGD-lite ----

std::vector<Real> simplex_project(std::span<const Real> v) {
  if (v.empty()) throw std::invalid_argument("simplex_project: empty vector");
  std::vector<Real> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  Real cum = 0.0;
  Real theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const Real t = (cum - 1.0) / static_cast<Real>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

void project_rows(Tensor& s) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const std::vector<Real> p = simplex_project(s.row(i));
    std::copy(p.begin(), p.end(), s.row(i).begin());
  }
}

void PgdConfig::validate() const {
  if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
  if (!(min_step_size >= 0.0)) throw ConfigError("min_step_size must be >= 0");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(grad_clip_max_norm > 0.0)) throw ConfigError("grad_clip_max_norm must be > 0");
  if (suffix_len < 1) throw ConfigError("suffix_len must be >= 1");
}

PgdConfig PgdConfig::from_kv(const KeyValues& kv) {
  PgdConfig c;
  c.step_size = kv_double(kv, "step_size", c.step_size);
  c.min_step_size = kv_double(kv, "min_step_size", c.min_step_size);
  c.adam_eps = kv_double(kv, "adam_eps", c.adam_eps);
  c.grad_clip_max_norm = kv_double(kv, "grad_clip_max_norm", c.grad_clip_max_norm);
  c.steps = kv_uint(kv, "steps", c.steps);
  c.suffix_len = kv_uint(kv, "suffix_len", c.suffix_len);
  c.seed = kv_uint(kv, "seed", c.seed);
  c.init_suffix = kv_string(kv, "pgd_init_suffix", c.init_suffix);
  c.max_new_tokens = kv_uint(kv, "max_new_tokens", c.max_new_tokens);
  c.validate();
  return c;
}

KeyValues PgdConfig::to_kv() const {
  return {{"step_size", format_double(step_size)},
          {"min_step_size", format_double(min_step_size)},
          {"adam_eps", format_double(adam_eps)},
          {"grad_clip_max_norm", format_double(grad_clip_max_norm)},
          {"steps", std::to_string(steps)},
          {"suffix_len", std::to_string(suffix_len)},
          {"seed", std::to_string(seed)},
          {"pgd_init_suffix", init_suffix},
          {"max_new_tokens", std::to_string(max_new_tokens)}};
}

Tensor random_relaxed_rows(std::size_t m, std::size_t V, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  Tensor s({m, V});
  for (std::size_t i = 0; i < m; ++i) {
    Real sum = 0.0;
    for (Real& v : s.row(i)) sum += (v = u(rng));
    for (Real& v : s.row(i)) v /= sum;
  }
  return s;
}

Tensor one_hot_rows(const TokenIds& ids, std::size_t V) {
  Tensor s({ids.size(), V});
  for (std::size_t i = 0; i < ids.size(); ++i) s.at(i, static_cast<std::size_t>(ids[i])) = 1.0;
  return s;
}

TokenIds argmax_rows(const Tensor& s) {
  TokenIds out;
  for (std::size_t i = 0; i < s.rows(); ++i) out.push_back(model::argmax(s.row(i)));
  return out;
}

void pgd_step(const Transformer& model, const PromptLayout& layout, PgdState& st,
              const PgdConfig& c, attack::StepTrace* trace) {
  const Tensor& E = model.embedding_matrix();
  const model::LossGrad lg = model::loss_grad_suffix(model, layout, matmul(st.s, E, false));
  Tensor g = matmul(lg.grad, E, true);
  if (!g.all_finite()) {
    throw std::runtime_error("pgd_step: non-finite gradient at step " + std::to_string(st.t));
  }
  const Real norm = attack::clip_global_norm(g, c.grad_clip_max_norm);
  const Real progress =
      c.steps == 0 ? 0.0 : static_cast<Real>(st.t) / static_cast<Real>(c.steps);
  const Real lr = c.min_step_size + 0.5 * (c.step_size - c.min_step_size) *
                                        (1.0 + std::cos(std::numbers::pi * progress));
  const Tensor dir = st.moments.direction(g, st.t + 1, nn::AdamHyper{0.9, 0.999, c.adam_eps});
  for (std::size_t i = 0; i < st.s.size(); ++i) st.s[i] -= lr * dir[i];
  project_rows(st.s);
  ++st.t;
  if (trace) *trace = {lg.loss, lg.loss, 0.0, norm, lr};
}

AttackResult pgd_attack(const Transformer& model, const text::Behavior& behavior,
                        const PgdConfig& c, const text::ChatTemplate& tmpl) {
  c.validate();
  const PromptLayout layout = PromptLayout::from_behavior(vocab(), tmpl, behavior);
  const std::size_t V = model.config().vocab;
  AttackResult r;
  r.method = "pgd";
  r.behavior_id = behavior.id;
  const auto start = Clock::now();

  PgdState st;
  st.s = c.init_suffix.empty() ? random_relaxed_rows(c.suffix_len, V, c.seed)
                               : one_hot_rows(init_tokens(c.init_suffix, c.suffix_len), V);
  st.moments = nn::AdamMoments(st.s.shape());
  for (std::size_t t = 0; t < c.steps; ++t) {
    const auto t0 = Clock::now();
    attack::StepTrace tr;
    pgd_step(model, layout, st, c, &tr);
    r.step_seconds.push_back(seconds_since(t0));
    r.trace.push_back(tr);
  }
  r.selected_step = c.steps;
  r.suffix = argmax_rows(st.s);
  r.final_embeddings = matmul(st.s, model.embedding_matrix(), false);
  finish(r, model, layout, c.max_new_tokens);
  r.continuous_response =
      attack::respond_continuous(model, layout, r.final_embeddings, c.max_new_tokens);
  r.total_seconds = seconds_since(start);
  return r;
}

}  // namespace regrelax::baselines
