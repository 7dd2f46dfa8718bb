#pragma once

// Shared between model.cpp and train.cpp: the flat activation cache and the
// hand-written forward/backward passes over one processed sequence.

#include <cstddef>
#include <vector>

#include "romelab/model.hpp"

namespace romelab::detail {

using Buf = std::vector<double>;

struct LayerActs {
  Buf ln1_out, ln1_mean, ln1_rstd;  // T*d, T, T
  Buf q, k, v;                      // T*d
  Buf att;                          // H*T*T softmax probabilities
  Buf att_mix;                      // T*d, heads concatenated, before out-proj
  Buf att_out;                      // T*d
  Buf x_mid;                        // T*d, after attention residual
  Buf ln2_out, ln2_mean, ln2_rstd;
  Buf mlp_pre;  // T*m, up-proj output before GELU
  Buf mlp_act;  // T*m, after GELU (the key tap)
  Buf mlp_out;  // T*d, down-proj output (the value tap / injection point)
  Buf x_out;    // T*d, after MLP residual
};

struct Acts {
  std::size_t T = 0;
  Buf x0;  // T*d token+position embedding sum
  std::vector<LayerActs> layers;
  Buf lnf_out, lnf_mean, lnf_rstd;
  Buf logits;  // T*V
};

// Parameter gradients, same shapes and registration order as the model.
struct ParamGrads {
  explicit ParamGrads(const ModelConfig& config);
  ModelConfig config;
  Matrix wte, wpe;
  std::vector<LayerWeights> layers;
  Vector lnf_gain, lnf_bias;
  void zero();
  void add_scaled(const ParamGrads& other, double s);
};

std::vector<TensorRef> named_tensors(ParamGrads& g);

// Replaces the edited-layer down-projection output at processed position
// `pos` with `*v` before the residual add.
struct Injection {
  std::size_t pos;
  const Vector* v;
};

// Validates tokens and prepends BOS when the config asks for it.
TokenSeq preprocess(const TinyLM& model, const TokenSeq& tokens);

void run_forward(const TinyLM& model, const TokenSeq& processed, Acts& acts,
                 const Injection* inj = nullptr);

// Backpropagates `dlogits` (T*V) through the cached activations.
//   grads   — accumulated into when non-null
//   inj     — must match the forward call that produced `acts`
//   d_inj   — when non-null and inj set, receives dLoss/d(injected v)
void run_backward(const TinyLM& model, const TokenSeq& processed, const Acts& acts,
                  const Buf& dlogits, ParamGrads* grads, const Injection* inj = nullptr,
                  Vector* d_inj = nullptr);

// Softmax cross-entropy on cached logits at one position. Returns the NLL and
// writes the corresponding dlogits row (softmax - onehot) scaled by `scale`.
double nll_at(const Acts& acts, std::size_t vocab, std::size_t pos, int target,
              Buf& dlogits, double scale);

}  // namespace romelab::detail
