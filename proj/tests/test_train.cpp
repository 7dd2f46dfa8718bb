#include <doctest.h>

#include <numeric>

#include "romelab/corpus.hpp"
#include "romelab/errors.hpp"
#include "romelab/train.hpp"
#include "test_utils.hpp"

using namespace romelab;
using namespace romelab::testutil;

namespace {

ModelConfig train_config() {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.vocab_size = 16;
  c.max_seq = 16;
  c.edited_layer = 0;
  return c;
}

}  // namespace

TEST_CASE("zero steps leaves weights untouched") {
  TinyLM m = TinyLM::random_init(train_config(), 1);
  TokenSeq corpus(128, 3);
  TrainHyper hyper;
  hyper.seq_len = 8;
  TrainResult r = train(m, corpus, 0, hyper);
  CHECK(r.loss_curve.empty());
  CHECK(max_abs_diff(r.model.wte, m.wte) == 0.0);
  CHECK(max_abs_diff(r.model.layers[0].w_down, m.layers[0].w_down) == 0.0);
}

TEST_CASE("repeating 2-token pattern is learned to < 0.1 nats") {
  TinyLM m = TinyLM::random_init(train_config(), 2);
  TokenSeq corpus;
  for (int i = 0; i < 256; ++i) {
    corpus.push_back(4);
    corpus.push_back(9);
  }
  TrainHyper hyper;
  hyper.seq_len = 8;
  hyper.batch_size = 8;
  hyper.learning_rate = 1e-2;
  hyper.seed = 7;
  TrainResult r = train(m, corpus, 200, hyper);
  CHECK(r.loss_curve.size() == 200);
  CHECK(r.loss_curve.back() < 0.1);
}

TEST_CASE("loss improves on synthetic natural text of 64 KiB") {
  SyntheticWorld world = generate_world(64 * 1024, 4, 4, 99);
  TokenSeq corpus = bytes_to_tokens(world.corpus);
  REQUIRE(corpus.size() >= 64 * 1024);

  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.vocab_size = 257;
  c.max_seq = 32;
  c.edited_layer = 1;
  TinyLM m = TinyLM::random_init(c, 3);

  TrainHyper hyper;
  hyper.seq_len = 24;
  hyper.batch_size = 8;
  hyper.learning_rate = 3e-3;
  hyper.seed = 11;
  const std::size_t steps = 80;
  TrainResult r = train(m, corpus, steps, hyper);

  const std::size_t tenth = steps / 10;
  const double first = std::accumulate(r.loss_curve.begin(),
                                       r.loss_curve.begin() + tenth, 0.0) / tenth;
  const double last = std::accumulate(r.loss_curve.end() - tenth,
                                      r.loss_curve.end(), 0.0) / tenth;
  CHECK(last < first);
}

TEST_CASE("training is deterministic given the seed") {
  TinyLM m = TinyLM::random_init(train_config(), 4);
  TokenSeq corpus;
  for (int i = 0; i < 512; ++i) corpus.push_back(i % 16);
  TrainHyper hyper;
  hyper.seq_len = 8;
  hyper.batch_size = 6;  // not a multiple of the shard count on purpose
  hyper.seed = 13;
  TrainResult a = train(m, corpus, 12, hyper);
  TrainResult b = train(m, corpus, 12, hyper);
  CHECK(max_abs_diff(a.model.wte, b.model.wte) == 0.0);
  CHECK(max_abs_diff(a.model.layers[0].w_up, b.model.layers[0].w_up) == 0.0);
  for (std::size_t i = 0; i < a.loss_curve.size(); ++i) {
    CHECK(a.loss_curve[i] == b.loss_curve[i]);
  }
}

TEST_CASE("corpus too small is rejected") {
  TinyLM m = TinyLM::random_init(train_config(), 5);
  TrainHyper hyper;
  hyper.seq_len = 8;
  CHECK_THROWS_AS(train(m, TokenSeq(8, 1), 1, hyper), CorpusTooSmall);
}
