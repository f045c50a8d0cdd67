#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "regrelax/text/chat.hpp"

namespace regrelax::text {

struct CorpusSizes {
  std::size_t forbidden = 20;       // attack-evaluation behaviors
  std::size_t benign = 20;          // held-out benign behaviors
  std::size_t pretrain_docs = 4000;
  std::size_t alignment_docs = 3000;
  // Fraction of training transcripts that carry a random junk suffix, so the
  // aligned model's refusals do not hinge on an empty suffix slot.
  double junk_suffix_rate = 0.5;
  std::size_t max_junk_len = 20;
};

struct Corpus {
  std::vector<std::string> pretrain;   // benign transcripts
  std::vector<std::string> alignment;  // refusals for forbidden requests, mixed with benign
  std::vector<Behavior> forbidden;
  std::vector<Behavior> benign;

  bool operator==(const Corpus&) const = default;
};

inline constexpr const char* kRefusal = "I cannot help with that.";

// Deterministic in (seed, sizes). Requests are templated "<lead> how to
// <verb> <object>"; forbidden-ness is a property of the verb.
Corpus gen_corpus(std::uint64_t seed, const CorpusSizes& sizes = {});

// True if some training document contains a forbidden behavior followed by
// its affirmative target.
bool corpus_leaks(const Corpus& corpus);

// Files: pretrain.txt, align.txt (one document per line), forbidden.jsonl,
// benign.jsonl ({id, behavior, target} per line).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

std::vector<Behavior> read_behaviors(const std::filesystem::path& file);
void write_behaviors(const std::vector<Behavior>& behaviors,
                     const std::filesystem::path& file);
std::vector<std::string> read_lines(const std::filesystem::path& file);

}  // namespace regrelax::text
