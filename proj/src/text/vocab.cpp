#include "regrelax/text/vocab.hpp"

#include <cstdio>

namespace regrelax::text {
namespace {

const std::array<std::string_view, Vocab::kNumSpecial> kSpecialForms = {
    "<pad>", "<s>", "</s>", "<|user|>", "<|assistant|>", "<|system|>"};

std::string describe_char(unsigned char c) {
  if (c >= 0x20 && c < 0x7f) return std::string("'") + static_cast<char>(c) + "'";
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", c);
  return buf;
}

}  // namespace

Vocab::Vocab() {
  char_to_id_.fill(-1);
  for (std::string_view s : kSpecialForms) tokens_.emplace_back(s);
  char_to_id_['\n'] = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back("\n");
  for (int c = 0x20; c < 0x7f; ++c) {
    char_to_id_[c] = static_cast<TokenId>(tokens_.size());
    tokens_.emplace_back(1, static_cast<char>(c));
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocab: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocab::encode(std::string_view text) const {
  TokenIds ids;
  ids.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      bool matched = false;
      for (std::size_t s = 0; s < kNumSpecial; ++s) {
        if (text.substr(i, kSpecialForms[s].size()) == kSpecialForms[s]) {
          ids.push_back(static_cast<TokenId>(s));
          i += kSpecialForms[s].size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    const TokenId id = c < 128 ? char_to_id_[c] : -1;
    if (id < 0) {
      throw EncodeError("encode: character " + describe_char(c) +
                            " at offset " + std::to_string(i) + " is not in the vocabulary",
                        i);
    }
    ids.push_back(id);
    ++i;
  }
  return ids;
}

std::string Vocab::decode(const TokenIds& ids) const {
  std::string out;
  for (TokenId id : ids) out += token(id);
  return out;
}

TokenIds Vocab::encode_suffix(std::string_view text, char separator) const {
  TokenIds ids = encode(text);
  const TokenId sep = char_to_id_[static_cast<unsigned char>(separator)];
  std::erase(ids, sep);
  return ids;
}

std::string default_suffix_text(std::size_t m) {
  std::string s;
  for (std::size_t i = 0; i < m; ++i) {
    if (i) s += ' ';
    s += '!';
  }
  return s;
}

}  // namespace regrelax::text
