#include "regrelax/common/kv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace regrelax {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

const std::string* find(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  return it == kv.end() ? nullptr : &it->second;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  if (*v == "inf") return INFINITY;
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("config key " + key + ": not a number: '" + *v + "'");
  }
  return out;
}

std::uint64_t kv_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("config key " + key + ": not a non-negative integer: '" + *v + "'");
  }
  return out;
}

bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw ConfigError("config key " + key + ": not a boolean: '" + *v + "'");
}

std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const std::string* v = find(kv, key);
  return v ? *v : fallback;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace regrelax
