#include "regrelax/model/config.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace regrelax::model {

using nn::Tensor;

void ModelConfig::validate() const {
  if (d == 0 || layers == 0 || heads == 0 || ff == 0 || context == 0 || vocab == 0) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (d % heads != 0) {
    throw std::invalid_argument("model config: d=" + std::to_string(d) +
                                " not divisible by heads=" + std::to_string(heads));
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "d=" << d << '\n'
     << "layers=" << layers << '\n'
     << "heads=" << heads << '\n'
     << "ff=" << ff << '\n'
     << "context=" << context << '\n'
     << "vocab=" << vocab << '\n'
     << "tie_head=" << (tie_head ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::size_t v = std::stoul(line.substr(eq + 1));
    if (key == "d") c.d = v;
    else if (key == "layers") c.layers = v;
    else if (key == "heads") c.heads = v;
    else if (key == "ff") c.ff = v;
    else if (key == "context") c.context = v;
    else if (key == "vocab") c.vocab = v;
    else if (key == "tie_head") c.tie_head = v != 0;
    else throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerParams& l = layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "ln1.gain", l.ln1_gain);
    fn(p + "ln1.bias", l.ln1_bias);
    fn(p + "attn.qkv.weight", l.qkv_weight);
    fn(p + "attn.qkv.bias", l.qkv_bias);
    fn(p + "attn.out.weight", l.out_weight);
    fn(p + "attn.out.bias", l.out_bias);
    fn(p + "ln2.gain", l.ln2_gain);
    fn(p + "ln2.bias", l.ln2_bias);
    fn(p + "mlp.fc.weight", l.fc_weight);
    fn(p + "mlp.fc.bias", l.fc_bias);
    fn(p + "mlp.proj.weight", l.proj_weight);
    fn(p + "mlp.proj.bias", l.proj_bias);
  }
  fn("lnf.gain", lnf_gain);
  fn("lnf.bias", lnf_bias);
  if (!head.shape().empty()) fn("head", head);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d;
  ModelParams p;
  p.tok_emb = Tensor({cfg.vocab, d});
  p.pos_emb = Tensor({cfg.context, d});
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    LayerParams l;
    l.ln1_gain = Tensor({d}, 1.0);
    l.ln1_bias = Tensor({d});
    l.qkv_weight = Tensor({d, 3 * d});
    l.qkv_bias = Tensor({3 * d});
    l.out_weight = Tensor({d, d});
    l.out_bias = Tensor({d});
    l.ln2_gain = Tensor({d}, 1.0);
    l.ln2_bias = Tensor({d});
    l.fc_weight = Tensor({d, cfg.ff});
    l.fc_bias = Tensor({cfg.ff});
    l.proj_weight = Tensor({cfg.ff, d});
    l.proj_bias = Tensor({d});
    p.layers.push_back(std::move(l));
  }
  p.lnf_gain = Tensor({d}, 1.0);
  p.lnf_bias = Tensor({d});
  if (!cfg.tie_head) p.head = Tensor({cfg.vocab, d});
  return p;
}

ModelParams ModelParams::random(const ModelConfig& cfg, std::uint64_t seed, nn::Real init_std) {
  ModelParams p = zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<nn::Real> normal(0.0, 1.0);
  auto fill = [&](Tensor& t, nn::Real std) {
    for (nn::Real& v : t.values()) v = std * normal(rng);
  };
  // Residual-branch output projections are scaled down with depth.
  const nn::Real resid_std = init_std / std::sqrt(2.0 * static_cast<nn::Real>(cfg.layers));
  fill(p.tok_emb, init_std);
  fill(p.pos_emb, init_std * 0.5);
  for (LayerParams& l : p.layers) {
    fill(l.qkv_weight, init_std);
    fill(l.out_weight, resid_std);
    fill(l.fc_weight, init_std);
    fill(l.proj_weight, resid_std);
  }
  if (!cfg.tie_head) fill(p.head, init_std);
  return p;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
  return ok;
}

void ModelParams::round_to_f32() {
  for_each([](const std::string&, Tensor& t) {
    for (nn::Real& v : t.values()) v = static_cast<nn::Real>(static_cast<float>(v));
  });
}

}  // namespace regrelax::model
