#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "regrelax/model/transformer.hpp"

namespace regrelax::model {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainSchedule {
  std::size_t steps = 1200;
  std::size_t batch = 8;
  nn::Real lr = 3e-3;
  nn::Real min_lr = 3e-4;
  std::size_t warmup = 50;
  nn::Real weight_decay = 0.01;
  nn::Real clip = 1.0;
  std::uint64_t seed = 1;
  // Only score tokens after the assistant marker.
  bool response_only = false;
  std::size_t log_every = 0;
};

struct TrainLog {
  std::size_t step = 0;
  nn::Real loss = 0.0;  // mean per scored token over the batch
  nn::Real lr = 0.0;
};

using TrainCallback = std::function<void(const TrainLog&)>;

// AdamW on mean token cross-entropy over minibatches sampled with the
// schedule seed. Gradients of a batch are summed in document order, so runs
// are bit-reproducible. Throws TrainingDiverged on a non-finite loss.
Transformer train_lm(const Transformer& init, const std::vector<TokenIds>& docs,
                     const TrainSchedule& schedule, const TrainCallback& on_log = {});

// Refusal alignment: response-only fine-tuning on the alignment transcripts.
Transformer align(const Transformer& base, const std::vector<TokenIds>& docs,
                  TrainSchedule schedule, const TrainCallback& on_log = {});

// Mean per-token loss of one document under the given scoring mask.
nn::Real document_loss(const Transformer& model, const TokenIds& doc, bool response_only);

}  // namespace regrelax::model
