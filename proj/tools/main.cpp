#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "regrelax/common/hash.hpp"
#include "regrelax/common/pool.hpp"
#include "regrelax/harness/harness.hpp"
#include "regrelax/model/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace regrelax;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;
constexpr int kGate = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = default_workers();
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "flat key=value config file");
  cmd->add_option("--seed", c.seed, "master seed");
  auto* out = cmd->add_option("--out", c.out, "output path");
  if (out_required) out->required();
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
}

KeyValues load_config(const Common& c) {
  if (c.config.empty()) return {};
  if (!fs::exists(c.config)) throw UsageError("config file not found: " + c.config);
  return read_key_values(c.config);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

// ---- commands ----

int cmd_gen_corpus(const Common& c) {
  harness::TrainConfig cfg = harness::TrainConfig::from_kv(load_config(c));
  if (c.seed) cfg.corpus_seed = *c.seed;
  const text::Corpus corpus = text::gen_corpus(cfg.corpus_seed, cfg.sizes);
  text::write_corpus(corpus, c.out);
  std::cout << "wrote corpus to " << c.out << ": " << corpus.pretrain.size() << " pretrain, "
            << corpus.alignment.size() << " alignment, " << corpus.forbidden.size()
            << " forbidden, " << corpus.benign.size() << " benign\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& corpus_dir) {
  harness::TrainConfig cfg = harness::TrainConfig::from_kv(load_config(c));
  if (corpus_dir.empty()) throw UsageError("train: --corpus is required");
  require_file(corpus_dir, "corpus directory");
  if (c.seed) {
    cfg.init_seed = *c.seed;
    cfg.pretrain.seed = *c.seed;
    cfg.alignment.seed = *c.seed + 1;
  }
  const text::Corpus corpus = text::read_corpus(corpus_dir);
  const harness::TrainOutcome out =
      harness::train_pipeline(cfg, corpus, [](const std::string& s) { std::cerr << s << "\n"; });
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  model::save_checkpoint(out.model, c.out);

  nlohmann::ordered_json info;
  info["checkpoint"] = c.out;
  info["hash"] = model::checkpoint_hash(out.model);
  info["refusal_rate"] = out.refusal_rate;
  info["refusal_rate_default_suffix"] = out.refusal_rate_bang;
  info["gate"] = cfg.gate;
  info["gate_passed"] = out.gate_passed;
  info["config"] = cfg.to_kv();
  write_file(c.out + ".train.json", info.dump(2) + "\n");

  std::cout << "checkpoint " << c.out << " hash " << info["hash"].get<std::string>() << "\n"
            << "refusal gate: " << out.refusal_rate * 100.0 << "% refused (threshold "
            << cfg.gate * 100.0 << "%): " << (out.gate_passed ? "PASS" : "FAIL") << "\n";
  if (!out.gate_passed) throw GateError("refusal gate failed");
  return kOk;
}

int cmd_attack(const Common& c, const std::string& model_path, const std::string& behaviors_path,
               const std::string& method) {
  require_file(model_path, "checkpoint");
  require_file(behaviors_path, "behaviors file");
  if (!harness::is_method(method)) throw UsageError("unknown method '" + method + "'");
  const KeyValues kv = load_config(c);
  try {
    harness::check_attack_keys(kv);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const model::Transformer m = model::load_checkpoint(model_path);
  const std::string hash = model::checkpoint_hash(m);
  const auto behaviors = text::read_behaviors(behaviors_path);
  const auto records =
      harness::attack_all(m, hash, behaviors, method, kv, c.seed.value_or(0), c.workers);

  std::string results, timings;
  std::vector<eval::Judged> judged;
  for (const harness::RunRecord& r : records) {
    results += harness::record_json(r) + "\n";
    timings += harness::timing_json(r) + "\n";
    judged.push_back({r.behavior_id, r.dataset, r.verdict});
  }
  write_file(c.out, results);
  write_file(harness::timing_path(c.out), timings);
  std::cout << records.size() << " records -> " << c.out << "\n";
  if (!judged.empty()) {
    std::cout << eval::asr_table({eval::compute_asr(judged, method, hash)});
  }
  return kOk;
}

int cmd_eval(const Common& c, const std::vector<std::string>& results_paths,
             const std::string& verdicts_out) {
  const KeyValues kv = load_config(c);
  std::vector<std::string> refusals = eval::default_refusals();
  if (kv.count("refusals")) {
    refusals.clear();
    std::stringstream ss(kv.at("refusals"));
    for (std::string r; std::getline(ss, r, '|');)
      if (!r.empty()) refusals.push_back(r);
  }
  std::map<std::string, std::vector<eval::Judged>> by_method;
  std::map<std::string, std::string> model_of;
  for (const std::string& p : results_paths) {
    require_file(p, "results file");
    for (const harness::StoredRecord& r : harness::read_results(p)) {
      by_method[r.method].push_back({r.behavior_id, r.dataset, eval::judge(r.response, r.target, refusals)});
      model_of[r.method] = r.model_hash;
    }
  }
  std::vector<eval::AsrReport> reports;
  std::string stream;
  for (const auto& [method, judged] : by_method) {
    reports.push_back(eval::compute_asr(judged, method, model_of[method]));
    stream += eval::verdict_stream(judged, method);
  }
  const std::string table = eval::asr_table(reports);
  write_file(c.out, table);
  if (!verdicts_out.empty()) write_file(verdicts_out, stream);
  std::cout << table;
  return kOk;
}

int cmd_transfer(const Common& c, const std::string& results_path, const std::string& victim_path) {
  require_file(results_path, "results file");
  require_file(victim_path, "victim checkpoint");
  const model::Transformer victim = model::load_checkpoint(victim_path);
  const std::string victim_hash = model::checkpoint_hash(victim);
  const auto records = harness::read_results(results_path);

  std::vector<eval::TransferItem> items;
  std::string source_hash;
  for (const harness::StoredRecord& r : records) {
    if (r.method != "rr" && r.method != "rr-decoupled") continue;
    if (!source_hash.empty() && r.model_hash != source_hash) {
      throw UsageError("transfer: results mix several source models");
    }
    source_hash = r.model_hash;
    items.push_back({{r.behavior_id, r.behavior, r.target}, r.suffix});
  }
  if (source_hash == victim_hash) {
    throw GateError("transfer: victim " + victim_hash + " is the source model; self-transfer is excluded");
  }
  const eval::TransferResult t =
      eval::transfer(items, source_hash.empty() ? "none" : source_hash, victim, victim_hash,
                     48, c.workers);
  const std::string table = eval::asr_table({t.report});
  write_file(c.out, table);
  std::cout << "source " << (source_hash.empty() ? "none" : source_hash) << " -> victim "
            << victim_hash << "\n"
            << table;
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& model_path, const std::string& behaviors_path,
               const std::vector<double>& values, std::size_t seeds) {
  require_file(model_path, "checkpoint");
  require_file(behaviors_path, "behaviors file");
  const KeyValues kv = load_config(c);
  const attack::AttackConfig base = attack::AttackConfig::from_kv(kv);
  const model::Transformer m = model::load_checkpoint(model_path);
  const std::string hash = model::checkpoint_hash(m);
  const auto behaviors = text::read_behaviors(behaviors_path);
  eval::Ablation ab;
  try {
    ab = eval::ablate_weight_decay(m, behaviors, base, values, c.seed.value_or(0), seeds,
                                   c.workers, hash);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<eval::AsrReport> reports;
  for (const eval::AblationArm& a : ab.arms) reports.push_back(a.report);
  std::string table = eval::asr_table(reports);
  const auto deltas = ab.deltas();
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    table += "# weight_decay " + format_double(ab.arms[i].weight_decay) + " -> " +
             format_double(ab.arms[i + 1].weight_decay) + ": successes " +
             (deltas[i] >= 0 ? "+" : "") + std::to_string(deltas[i]) + "\n";
  }
  write_file(c.out, table);
  std::cout << table;
  return kOk;
}

int cmd_runtime_report(const Common& c, const std::vector<std::string>& results_paths) {
  std::vector<harness::StoredTiming> timings;
  for (const std::string& p : results_paths) {
    const fs::path t = harness::timing_path(p);
    require_file(t.string(), "timing file");
    const auto part = harness::read_timings(t);
    timings.insert(timings.end(), part.begin(), part.end());
  }
  std::vector<harness::RuntimeRow> rows;
  try {
    rows = harness::runtime_rows(timings);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string table = harness::runtime_table(rows);
  write_file(c.out, table);
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized-relaxation adversarial suffix toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string corpus_dir, model_path, behaviors_path, method, verdicts_out, victim_path;
  std::vector<std::string> results_paths;
  std::vector<double> values{0.0, 0.1};
  std::size_t seeds = 1;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic training corpus");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "pretrain, align and gate a toy model");
  add_common(train, common);
  train->add_option("--corpus", corpus_dir, "corpus directory from gen-corpus");

  auto* attack_cmd = app.add_subcommand("attack", "attack every behavior in a file");
  add_common(attack_cmd, common);
  attack_cmd->add_option("--model", model_path, "checkpoint")->required();
  attack_cmd->add_option("--behaviors", behaviors_path, "behaviors JSONL")->required();
  attack_cmd->add_option("--method", method, "rr | rr-decoupled | soft | gcg | pgd")->required();

  auto* eval_cmd = app.add_subcommand("eval", "judge results and tabulate ASR");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--results", results_paths, "results JSONL files")->required();
  eval_cmd->add_option("--verdicts", verdicts_out, "write the verdict stream here");

  auto* transfer_cmd = app.add_subcommand("transfer", "replay RR suffixes on another model");
  add_common(transfer_cmd, common);
  transfer_cmd->add_option("--results", results_paths, "source results JSONL")->required();
  transfer_cmd->add_option("--model", victim_path, "victim checkpoint")->required();

  auto* ablate = app.add_subcommand("ablate", "decoupled weight decay ablation");
  add_common(ablate, common);
  ablate->add_option("--model", model_path, "checkpoint")->required();
  ablate->add_option("--behaviors", behaviors_path, "behaviors JSONL")->required();
  ablate->add_option("--values", values, "weight decay values")->delimiter(',');
  ablate->add_option("--seeds", seeds, "seeds per behavior")->check(CLI::PositiveNumber);

  auto* runtime = app.add_subcommand("runtime-report", "per-step runtime table from timing files");
  add_common(runtime, common);
  runtime->add_option("--results", results_paths, "results JSONL files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_corpus(common);
    if (*train) return cmd_train(common, corpus_dir);
    if (*attack_cmd) return cmd_attack(common, model_path, behaviors_path, method);
    if (*eval_cmd) return cmd_eval(common, results_paths, verdicts_out);
    if (*transfer_cmd) return cmd_transfer(common, results_paths.at(0), victim_path);
    if (*ablate) return cmd_ablate(common, model_path, behaviors_path, values, seeds);
    if (*runtime) return cmd_runtime_report(common, results_paths);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const GateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kGate;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
