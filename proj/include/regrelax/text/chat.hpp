#pragma once

#include <string>

#include "regrelax/text/vocab.hpp"

namespace regrelax::text {

struct Behavior {
  std::string id;
  std::string behavior;
  std::string target;

  bool operator==(const Behavior&) const = default;
};

// Dataset label encoded in the id prefix ("tell-003" -> "tell").
std::string dataset_of(const Behavior& b);

struct RenderedPrompt {
  TokenIds ids;
  std::size_t suffix_begin = 0;
  std::size_t suffix_end = 0;

  std::size_t suffix_len() const { return suffix_end - suffix_begin; }
};

// Layout: user_prefix + behavior + separator, then the suffix tokens, then
// assistant_prefix. Responses follow the assistant prefix and end with
// end_of_turn.
struct ChatTemplate {
  std::string user_prefix = "<s><|user|>";
  std::string separator = " ";
  std::string assistant_prefix = "<|assistant|>";
  std::string end_of_turn = "</s>";

  RenderedPrompt render(const Vocab& vocab, const std::string& behavior,
                        const TokenIds& suffix) const;

  // Full training transcript: rendered prompt, response, end of turn.
  std::string transcript(const std::string& behavior, const std::string& suffix_text,
                         const std::string& response) const;
};

}  // namespace regrelax::text
