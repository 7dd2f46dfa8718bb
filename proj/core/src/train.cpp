#include "romelab/train.hpp"

#include <cmath>
#include <thread>

#include "model_internal.hpp"
#include "romelab/errors.hpp"
#include "romelab/rng.hpp"

namespace romelab {

namespace {

constexpr std::size_t kGradShards = 4;  // fixed shard count keeps runs reproducible
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct BatchItem {
  std::size_t offset;
};

}  // namespace

TrainResult train(const TinyLM& model, const TokenSeq& corpus, std::size_t steps,
                  const TrainHyper& hyper) {
  const auto& cfg = model.config;
  if (hyper.seq_len + 1 > corpus.size()) {
    throw CorpusTooSmall("train: corpus of " + std::to_string(corpus.size()) +
                         " tokens cannot fit seq_len " + std::to_string(hyper.seq_len));
  }
  if (hyper.batch_size == 0 || hyper.seq_len == 0 || !(hyper.learning_rate > 0.0)) {
    throw ConfigInvalid("train: batch_size, seq_len and learning_rate must be positive");
  }
  const std::size_t off = cfg.bos_mode == BosMode::prepend ? 1 : 0;
  if (hyper.seq_len + off > cfg.max_seq) {
    throw ConfigInvalid("train: seq_len does not fit max_seq");
  }

  TrainResult result;
  result.model = model;
  if (steps == 0) return result;

  TinyLM& m = result.model;
  auto params = named_tensors(m);

  detail::ParamGrads total(cfg);
  std::vector<detail::ParamGrads> shard_grads;
  shard_grads.reserve(kGradShards);
  for (std::size_t s = 0; s < kGradShards; ++s) shard_grads.emplace_back(cfg);

  // Adam moments, laid out against the named-tensor registration order
  std::vector<std::vector<double>> adam_m(params.size()), adam_v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_m[i].assign(params[i].size, 0.0);
    adam_v[i].assign(params[i].size, 0.0);
  }

  Rng rng(hyper.seed);
  const std::size_t max_offset = corpus.size() - hyper.seq_len - 1;
  const std::size_t n_threads =
      std::max<std::size_t>(1, std::min<std::size_t>(
                                   kGradShards, std::thread::hardware_concurrency()));

  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<BatchItem> batch(hyper.batch_size);
    for (auto& item : batch) item.offset = rng.next_below(max_offset + 1);

    std::vector<double> item_losses(hyper.batch_size, 0.0);
    for (auto& g : shard_grads) g.zero();

    auto run_shard = [&](std::size_t shard) {
      detail::Acts acts;
      detail::Buf dlogits;
      for (std::size_t b = shard; b < hyper.batch_size; b += kGradShards) {
        const std::size_t o = batch[b].offset;
        TokenSeq window(corpus.begin() + o, corpus.begin() + o + hyper.seq_len);
        const TokenSeq proc = detail::preprocess(m, window);
        detail::run_forward(m, proc, acts);

        const std::size_t terms = proc.size();
        dlogits.assign(proc.size() * cfg.vocab_size, 0.0);
        const double scale = 1.0 / (static_cast<double>(terms) *
                                    static_cast<double>(hyper.batch_size));
        double loss = 0.0;
        // processed position p predicts: the first window token when p is the
        // BOS slot, otherwise the corpus byte after the one at p.
        for (std::size_t p = 0; p < proc.size(); ++p) {
          const int target = p < off ? static_cast<int>(corpus[o])
                                     : static_cast<int>(corpus[o + (p - off) + 1]);
          loss += detail::nll_at(acts, cfg.vocab_size, p, target, dlogits, scale);
        }
        item_losses[b] = loss / static_cast<double>(terms);
        detail::run_backward(m, proc, acts, dlogits, &shard_grads[shard]);
      }
    };

    if (n_threads <= 1) {
      for (std::size_t s = 0; s < kGradShards; ++s) run_shard(s);
    } else {
      std::vector<std::thread> threads;
      threads.reserve(kGradShards);
      for (std::size_t s = 0; s < kGradShards; ++s) threads.emplace_back(run_shard, s);
      for (auto& t : threads) t.join();
    }

    total.zero();
    for (const auto& g : shard_grads) total.add_scaled(g, 1.0);

    double step_loss = 0.0;
    for (double l : item_losses) step_loss += l;
    step_loss /= static_cast<double>(hyper.batch_size);
    if (!std::isfinite(step_loss)) {
      throw NonFiniteLoss("train: loss diverged at step " + std::to_string(step));
    }
    result.loss_curve.push_back(step_loss);

    auto grads = named_tensors(total);
    if (hyper.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads) {
        for (std::size_t j = 0; j < g.size; ++j) sq += g.data[j] * g.data[j];
      }
      const double gnorm = std::sqrt(sq);
      if (gnorm > hyper.grad_clip) {
        const double s = hyper.grad_clip / gnorm;
        for (auto& g : grads) {
          for (std::size_t j = 0; j < g.size; ++j) g.data[j] *= s;
        }
      }
    }

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i].data;
      const double* g = grads[i].data;
      double* mm = adam_m[i].data();
      double* vv = adam_v[i].data();
      for (std::size_t j = 0; j < params[i].size; ++j) {
        mm[j] = kAdamBeta1 * mm[j] + (1.0 - kAdamBeta1) * g[j];
        vv[j] = kAdamBeta2 * vv[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
        const double mhat = mm[j] / bc1;
        const double vhat = vv[j] / bc2;
        p[j] -= hyper.learning_rate * mhat / (std::sqrt(vhat) + kAdamEps);
      }
    }
  }

  return result;
}

}  // namespace romelab
