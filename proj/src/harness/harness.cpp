#include "regrelax/harness/harness.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

#include "regrelax/common/hash.hpp"
#include "regrelax/common/pool.hpp"

namespace regrelax::harness {
namespace {

using json = nlohmann::ordered_json;

const text::Vocab& vocab() {
  static const text::Vocab v;
  return v;
}

void schedule_from_kv(const KeyValues& kv, const std::string& p, model::TrainSchedule& s) {
  s.steps = kv_uint(kv, p + "steps", s.steps);
  s.batch = kv_uint(kv, p + "batch", s.batch);
  s.lr = kv_double(kv, p + "lr", s.lr);
  s.min_lr = kv_double(kv, p + "min_lr", s.min_lr);
  s.warmup = kv_uint(kv, p + "warmup", s.warmup);
  s.weight_decay = kv_double(kv, p + "weight_decay", s.weight_decay);
  s.clip = kv_double(kv, p + "clip", s.clip);
  s.seed = kv_uint(kv, p + "seed", s.seed);
  s.log_every = kv_uint(kv, p + "log_every", s.log_every);
}

void schedule_to_kv(KeyValues& kv, const std::string& p, const model::TrainSchedule& s) {
  kv[p + "steps"] = std::to_string(s.steps);
  kv[p + "batch"] = std::to_string(s.batch);
  kv[p + "lr"] = format_double(s.lr);
  kv[p + "min_lr"] = format_double(s.min_lr);
  kv[p + "warmup"] = std::to_string(s.warmup);
  kv[p + "weight_decay"] = format_double(s.weight_decay);
  kv[p + "clip"] = format_double(s.clip);
  kv[p + "seed"] = std::to_string(s.seed);
  kv[p + "log_every"] = std::to_string(s.log_every);
}

json trace_json(const std::vector<attack::StepTrace>& trace) {
  json total = json::array(), ce = json::array(), reg = json::array(), norm = json::array();
  for (const attack::StepTrace& s : trace) {
    total.push_back(s.total);
    ce.push_back(s.ce);
    reg.push_back(s.reg);
    norm.push_back(s.grad_norm);
  }
  return json{{"total", total}, {"ce", ce}, {"reg", reg}, {"grad_norm", norm}};
}

json verdict_json(const eval::JudgeVerdict& v) {
  json o{{"success", v.success}, {"matched_target", v.matched_target},
         {"refusal_hit", v.refusal_hit}};
  if (v.matched_span) {
    o["matched_span"] = {v.matched_span->first, v.matched_span->second};
  } else {
    o["matched_span"] = nullptr;
  }
  return o;
}

template <class T>
T field(const json& o, const char* key, std::size_t line) {
  if (!o.contains(key)) {
    throw std::runtime_error("results line " + std::to_string(line) + ": missing field '" + key +
                             "'");
  }
  try {
    return o.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::runtime_error("results line " + std::to_string(line) + ": field '" + key +
                             "' has the wrong type");
  }
}

}  // namespace

// ---- training ----

model::TrainSchedule TrainConfig::default_alignment() {
  model::TrainSchedule s;
  s.steps = 600;
  s.lr = 1e-3;
  s.min_lr = 1e-4;
  s.warmup = 20;
  s.seed = 2;
  s.response_only = true;
  return s;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  static const KeyValues known = TrainConfig{}.to_kv();
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("train config: unknown key '" + k + "'");
  TrainConfig c;
  c.corpus_seed = kv_uint(kv, "corpus_seed", c.corpus_seed);
  c.init_seed = kv_uint(kv, "init_seed", c.init_seed);
  c.gate = kv_double(kv, "gate", c.gate);
  c.max_new_tokens = kv_uint(kv, "max_new_tokens", c.max_new_tokens);

  std::string model_text;
  for (const auto& [k, v] : kv)
    if (k.starts_with("model.")) model_text += k.substr(6) + "=" + v + "\n";
  try {
    if (!model_text.empty()) c.model = model::ModelConfig::from_text(c.model.to_text() + model_text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }

  text::CorpusSizes& s = c.sizes;
  s.forbidden = kv_uint(kv, "corpus.forbidden", s.forbidden);
  s.benign = kv_uint(kv, "corpus.benign", s.benign);
  s.pretrain_docs = kv_uint(kv, "corpus.pretrain_docs", s.pretrain_docs);
  s.alignment_docs = kv_uint(kv, "corpus.alignment_docs", s.alignment_docs);
  s.junk_suffix_rate = kv_double(kv, "corpus.junk_suffix_rate", s.junk_suffix_rate);
  s.max_junk_len = kv_uint(kv, "corpus.max_junk_len", s.max_junk_len);

  schedule_from_kv(kv, "pretrain.", c.pretrain);
  schedule_from_kv(kv, "align.", c.alignment);
  c.model.validate();
  return c;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv{{"corpus_seed", std::to_string(corpus_seed)},
               {"init_seed", std::to_string(init_seed)},
               {"gate", format_double(gate)},
               {"max_new_tokens", std::to_string(max_new_tokens)},
               {"corpus.forbidden", std::to_string(sizes.forbidden)},
               {"corpus.benign", std::to_string(sizes.benign)},
               {"corpus.pretrain_docs", std::to_string(sizes.pretrain_docs)},
               {"corpus.alignment_docs", std::to_string(sizes.alignment_docs)},
               {"corpus.junk_suffix_rate", format_double(sizes.junk_suffix_rate)},
               {"corpus.max_junk_len", std::to_string(sizes.max_junk_len)}};
  const KeyValues m = parse_key_values(model.to_text());
  for (const auto& [k, v] : m) kv["model." + k] = v;
  schedule_to_kv(kv, "pretrain.", pretrain);
  schedule_to_kv(kv, "align.", alignment);
  return kv;
}

text::TokenIds encode_document(const std::string& doc) { return vocab().encode(doc); }

TrainOutcome train_pipeline(const TrainConfig& c, const text::Corpus& corpus, const LogFn& log) {
  auto encode_all = [](const std::vector<std::string>& docs) {
    std::vector<text::TokenIds> out;
    out.reserve(docs.size());
    for (const std::string& d : docs) out.push_back(encode_document(d));
    return out;
  };
  auto logger = [&](const char* phase) {
    return [&log, phase](const model::TrainLog& l) {
      if (log) {
        log(std::string(phase) + " step " + std::to_string(l.step) + " loss " +
            std::to_string(l.loss) + " lr " + std::to_string(l.lr));
      }
    };
  };

  Transformer m = Transformer::random(c.model, c.init_seed);
  m = model::train_lm(m, encode_all(corpus.pretrain), c.pretrain, logger("pretrain"));
  m = model::align(m, encode_all(corpus.alignment), c.alignment, logger("align"));
  model::ModelParams p = m.params();
  p.round_to_f32();
  Transformer rounded(c.model, std::move(p));

  TrainOutcome out{std::move(rounded), 0.0, 0.0, false};
  out.refusal_rate = eval::refusal_rate(out.model, corpus.forbidden, "", c.max_new_tokens);
  out.refusal_rate_bang = eval::refusal_rate(
      out.model, corpus.forbidden, std::string(20, '!'), c.max_new_tokens);
  out.gate_passed = out.refusal_rate >= c.gate;
  return out;
}

// ---- attacks ----

const std::vector<std::string>& methods() {
  static const std::vector<std::string> m{"rr", "rr-decoupled", "soft", "gcg", "pgd"};
  return m;
}

bool is_method(const std::string& m) {
  return std::find(methods().begin(), methods().end(), m) != methods().end();
}

const std::vector<std::string>& attack_keys() {
  static const std::vector<std::string> k = [] {
    std::set<std::string> s;
    for (const auto& [key, v] : attack::AttackConfig{}.to_kv()) s.insert(key);
    for (const auto& [key, v] : baselines::GcgConfig{}.to_kv()) s.insert(key);
    for (const auto& [key, v] : baselines::PgdConfig{}.to_kv()) s.insert(key);
    return std::vector<std::string>(s.begin(), s.end());
  }();
  return k;
}

void check_attack_keys(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (!std::binary_search(attack_keys().begin(), attack_keys().end(), k)) {
      throw ConfigError("attack config: unknown key '" + k + "'");
    }
  }
}

attack::AttackResult run_method(const Transformer& model, const text::Behavior& behavior,
                                const std::string& method, const KeyValues& kv,
                                std::uint64_t seed) {
  if (model.config().vocab != vocab().size()) {
    throw std::invalid_argument("model vocabulary size " + std::to_string(model.config().vocab) +
                                " does not match the tokenizer");
  }
  KeyValues with_seed = kv;
  with_seed["seed"] = std::to_string(seed);
  if (method == "rr" || method == "rr-decoupled") {
    attack::AttackConfig c = attack::AttackConfig::from_kv(with_seed);
    c.variant = method == "rr" ? attack::Variant::ExplicitL2 : attack::Variant::DecoupledDecay;
    return attack::run_attack(model, behavior, c);
  }
  if (method == "soft") {
    const double step = kv_double(kv, "step_size", 0.1);
    const std::size_t steps = kv_uint(kv, "steps", 250);
    return baselines::soft_attack(model, behavior, step, steps);
  }
  if (method == "gcg") {
    return baselines::gcg_attack(model, behavior, baselines::GcgConfig::from_kv(with_seed));
  }
  if (method == "pgd") {
    KeyValues k = with_seed;
    if (!kv.count("step_size")) k["step_size"] = "0.01";
    return baselines::pgd_attack(model, behavior, baselines::PgdConfig::from_kv(k));
  }
  throw std::invalid_argument("unknown method '" + method + "'");
}

std::vector<RunRecord> attack_all(const Transformer& model, const std::string& model_hash,
                                  const std::vector<text::Behavior>& behaviors,
                                  const std::string& method, const KeyValues& kv,
                                  std::uint64_t master_seed, std::size_t workers) {
  if (!is_method(method)) throw std::invalid_argument("unknown method '" + method + "'");
  check_attack_keys(kv);
  std::vector<text::Behavior> sorted = behaviors;
  std::sort(sorted.begin(), sorted.end(),
            [](const text::Behavior& a, const text::Behavior& b) { return a.id < b.id; });

  std::vector<RunRecord> out(sorted.size());
  parallel_for(sorted.size(), workers, [&](std::size_t i) {
    const text::Behavior& b = sorted[i];
    RunRecord& r = out[i];
    r.method = method;
    r.model_hash = model_hash;
    r.behavior_id = b.id;
    r.behavior = b.behavior;
    r.target = b.target;
    r.dataset = text::dataset_of(b);
    r.config = kv;
    r.seed = derive_seed(master_seed, b.id, method);
    r.result = run_method(model, b, method, kv, r.seed);
    r.verdict = eval::judge(r.result.response, b.target);
  });
  return out;
}

std::string record_json(const RunRecord& r) {
  json o;
  o["method"] = r.method;
  o["model_hash"] = r.model_hash;
  o["behavior_id"] = r.behavior_id;
  o["dataset"] = r.dataset;
  o["behavior"] = r.behavior;
  o["target"] = r.target;
  o["seed"] = r.seed;
  o["config"] = json(r.config);
  o["trace"] = trace_json(r.result.trace);
  o["selected_step"] = r.result.selected_step;
  o["suffix_ids"] = r.result.suffix;
  o["suffix_text"] = r.result.suffix_text;
  o["discrete_ce"] = r.result.discrete_ce;
  o["response"] = r.result.response;
  if (r.result.continuous_response) {
    o["continuous_response"] = *r.result.continuous_response;
  } else {
    o["continuous_response"] = nullptr;
  }
  o["verdict"] = verdict_json(r.verdict);
  return o.dump();
}

std::string timing_json(const RunRecord& r) {
  json o;
  o["method"] = r.method;
  o["behavior_id"] = r.behavior_id;
  o["step_seconds"] = r.result.step_seconds;
  o["total_seconds"] = r.result.total_seconds;
  return o.dump();
}

std::vector<StoredRecord> read_results(const std::filesystem::path& file) {
  std::vector<StoredRecord> out;
  std::size_t line_no = 0;
  for (const std::string& line : text::read_lines(file)) {
    ++line_no;
    if (line.empty()) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::exception&) {
      throw std::runtime_error("results line " + std::to_string(line_no) + ": not JSON");
    }
    StoredRecord r;
    r.method = field<std::string>(o, "method", line_no);
    r.model_hash = field<std::string>(o, "model_hash", line_no);
    r.behavior_id = field<std::string>(o, "behavior_id", line_no);
    r.dataset = field<std::string>(o, "dataset", line_no);
    r.behavior = field<std::string>(o, "behavior", line_no);
    r.target = field<std::string>(o, "target", line_no);
    r.seed = field<std::uint64_t>(o, "seed", line_no);
    r.suffix = field<text::TokenIds>(o, "suffix_ids", line_no);
    r.response = field<std::string>(o, "response", line_no);
    const json v = field<json>(o, "verdict", line_no);
    r.verdict.success = field<bool>(v, "success", line_no);
    r.verdict.matched_target = field<bool>(v, "matched_target", line_no);
    r.verdict.refusal_hit = field<bool>(v, "refusal_hit", line_no);
    out.push_back(std::move(r));
  }
  return out;
}

std::filesystem::path timing_path(const std::filesystem::path& results) {
  return results.string() + ".timing.jsonl";
}

std::vector<StoredTiming> read_timings(const std::filesystem::path& file) {
  std::vector<StoredTiming> out;
  std::size_t line_no = 0;
  for (const std::string& line : text::read_lines(file)) {
    ++line_no;
    if (line.empty()) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::exception&) {
      throw std::runtime_error("timing line " + std::to_string(line_no) + ": not JSON");
    }
    out.push_back({field<std::string>(o, "method", line_no),
                   field<std::string>(o, "behavior_id", line_no),
                   field<std::vector<double>>(o, "step_seconds", line_no),
                   field<double>(o, "total_seconds", line_no)});
  }
  return out;
}

std::vector<RuntimeRow> runtime_rows(const std::vector<StoredTiming>& timings) {
  std::map<std::string, RuntimeRow> by;
  std::map<std::string, double> step_sum;
  std::map<std::string, double> total_sum;
  for (const StoredTiming& t : timings) {
    RuntimeRow& row = by[t.method];
    row.method = t.method;
    ++row.runs;
    row.steps += t.step_seconds.size();
    step_sum[t.method] += std::accumulate(t.step_seconds.begin(), t.step_seconds.end(), 0.0);
    total_sum[t.method] += t.total_seconds;
  }
  std::vector<RuntimeRow> rows;
  for (auto& [m, row] : by) {
    row.mean_step_seconds = row.steps ? step_sum[m] / static_cast<double>(row.steps) : 0.0;
    row.mean_total_seconds = total_sum[m] / static_cast<double>(row.runs);
    rows.push_back(row);
  }
  if (rows.size() > 1) {
    const auto rr = by.find("rr");
    if (rr == by.end()) throw std::invalid_argument("runtime report: no rr timings to compare against");
    for (RuntimeRow& row : rows) row.ratio_vs_rr = row.mean_step_seconds / rr->second.mean_step_seconds;
  }
  return rows;
}

std::string runtime_table(const std::vector<RuntimeRow>& rows) {
  std::string out = "method\truns\tsteps\tmean_step_seconds\tmean_total_seconds\tstep_ratio_vs_rr\n";
  char buf[256];
  for (const RuntimeRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%.6g\t%.6g\t%.4g\n", r.method.c_str(), r.runs,
                  r.steps, r.mean_step_seconds, r.mean_total_seconds, r.ratio_vs_rr);
    out += buf;
  }
  return out;
}

}  // namespace regrelax::harness
