#include "regrelax/text/chat.hpp"

namespace regrelax::text {

std::string dataset_of(const Behavior& b) {
  const auto dash = b.id.rfind('-');
  return dash == std::string::npos ? std::string("default") : b.id.substr(0, dash);
}

RenderedPrompt ChatTemplate::render(const Vocab& vocab, const std::string& behavior,
                                    const TokenIds& suffix) const {
  for (TokenId id : suffix) vocab.token(id);  // validates range

  RenderedPrompt out;
  out.ids = vocab.encode(user_prefix + behavior + separator);
  out.suffix_begin = out.ids.size();
  out.ids.insert(out.ids.end(), suffix.begin(), suffix.end());
  out.suffix_end = out.ids.size();
  const TokenIds tail = vocab.encode(assistant_prefix);
  out.ids.insert(out.ids.end(), tail.begin(), tail.end());
  return out;
}

std::string ChatTemplate::transcript(const std::string& behavior,
                                     const std::string& suffix_text,
                                     const std::string& response) const {
  return user_prefix + behavior + separator + suffix_text + assistant_prefix + response +
         end_of_turn;
}

}  // namespace regrelax::text
