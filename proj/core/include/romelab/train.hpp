#pragma once

#include <cstdint>
#include <vector>

#include "romelab/model.hpp"

namespace romelab {

struct TrainHyper {
  double learning_rate = 3e-3;
  std::size_t batch_size = 16;
  std::size_t seq_len = 64;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
};

struct TrainResult {
  TinyLM model;
  std::vector<double> loss_curve;  // mean batch NLL per step, in nats
};

// Next-token cross-entropy training with Adam updates on windows drawn
// uniformly from the corpus. The input model is not modified. Fully
// deterministic given the seed: batches are sharded into a fixed number of
// slices whose gradients are reduced in slice order, so the result does not
// depend on how many threads actually run.
TrainResult train(const TinyLM& model, const TokenSeq& corpus, std::size_t steps,
                  const TrainHyper& hyper);

}  // namespace romelab
