#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace regrelax {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat key=value configuration. Blank lines and lines starting with '#'
// are ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

// Typed lookups; `fallback` is returned when the key is absent and a
// ConfigError names the key when the value does not parse.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::uint64_t kv_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace regrelax
