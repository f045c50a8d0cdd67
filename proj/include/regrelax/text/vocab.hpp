#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace regrelax::text {

using TokenId = int;
using TokenIds = std::vector<TokenId>;

class EncodeError : public std::invalid_argument {
 public:
  EncodeError(const std::string& msg, std::size_t offset)
      : std::invalid_argument(msg), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Character-level vocabulary: six special tokens, newline, then printable
// ASCII 0x20..0x7e. Specials have textual surface forms so transcripts can
// be stored as plain text lines.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUser = 3;
  static constexpr TokenId kAssistant = 4;
  static constexpr TokenId kSystem = 5;
  static constexpr std::size_t kNumSpecial = 6;

  Vocab();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && id < static_cast<TokenId>(kNumSpecial); }

  // Throws EncodeError naming the offending character and its byte offset.
  TokenIds encode(std::string_view text) const;
  std::string decode(const TokenIds& ids) const;

  // Suffix initializers are separator-delimited token lists ("! ! !"):
  // separators are dropped, every other character is one token.
  TokenIds encode_suffix(std::string_view text, char separator = ' ') const;

 private:
  std::vector<std::string> tokens_;
  std::array<TokenId, 128> char_to_id_{};
};

// The reproducibility anchor: m exclamation marks separated by spaces.
std::string default_suffix_text(std::size_t m = 20);

}  // namespace regrelax::text
