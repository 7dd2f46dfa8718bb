#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "romelab/linalg.hpp"

namespace romelab {

using TokenSeq = std::vector<int>;

// Byte-level vocabulary: tokens 0..255 are raw bytes, 256 is the optional BOS.
inline constexpr int kBosToken = 256;

enum class BosMode { none, prepend };
enum class PosSwap { off, second_to_first, first_to_second };

std::string to_string(BosMode m);
std::string to_string(PosSwap m);
BosMode bos_mode_from_string(const std::string& s);
PosSwap pos_swap_from_string(const std::string& s);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_mlp = 0;  // 0 resolves to 4 * d_model
  std::size_t vocab_size = 257;
  std::size_t max_seq = 64;
  std::size_t edited_layer = 0;
  BosMode bos_mode = BosMode::none;
  PosSwap pos_swap = PosSwap::off;
  double ln_epsilon = 1e-5;

  std::size_t mlp_dim() const { return d_mlp == 0 ? 4 * d_model : d_mlp; }
  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ConfigInvalid when any structural invariant fails.
  void validate() const;
};

struct LayerWeights {
  Vector ln1_gain, ln1_bias;  // d_model
  Matrix w_q, w_k, w_v, w_o;  // d_model x d_model
  Vector ln2_gain, ln2_bias;  // d_model
  Matrix w_up;                // d_mlp x d_model, key map (GELU applied after)
  Matrix w_down;              // d_model x d_mlp, the editable value map
};

// Pre-norm decoder-only transformer. GELU MLP, learned absolute position
// embeddings, output head tied to the token embedding table, no projection
// biases. Immutable during inference; forward calls on a shared instance may
// run concurrently.
struct TinyLM {
  ModelConfig config;
  Matrix wte;  // vocab_size x d_model (also the output head)
  Matrix wpe;  // max_seq x d_model
  std::vector<LayerWeights> layers;
  Vector lnf_gain, lnf_bias;

  static TinyLM random_init(const ModelConfig& config, std::uint64_t seed);
};

// View of one weight tensor, in the fixed registration order used for
// serialization and optimizer state.
struct TensorRef {
  std::string name;
  std::vector<std::uint64_t> shape;
  double* data;
  std::size_t size;
};
std::vector<TensorRef> named_tensors(TinyLM& model);

struct ForwardTrace {
  // The sequence the model actually processed (BOS prepended when the config
  // asks for it). Caller position p maps to processed index p + bos_offset.
  TokenSeq processed_tokens;
  std::size_t bos_offset = 0;

  std::vector<Vector> logits;         // per processed position, vocab_size
  std::vector<Vector> tapped_keys;    // edited-layer up-proj output after GELU, d_mlp
  std::vector<Vector> tapped_values;  // edited-layer down-proj output, d_model

  // Filled only when forward() is asked to capture all layers: [layer][pos].
  std::vector<std::vector<Vector>> per_layer_keys;

  std::size_t index(std::size_t caller_pos) const { return caller_pos + bos_offset; }
};

// Causal forward pass. Errors: EmptyInput, SequenceTooLong, TokenOutOfRange.
ForwardTrace forward(const TinyLM& model, const TokenSeq& tokens,
                     bool capture_all_layers = false);

// Same as forward, but the edited-layer down-projection output at caller
// position `pos` is replaced by `v` before the residual add.
ForwardTrace forward_with_injection(const TinyLM& model, const TokenSeq& tokens,
                                    std::size_t pos, const Vector& v);

// Exact reverse-mode gradient of the negative log-likelihood of `target` at
// caller position `target_pos` with respect to the injected vector `v`.
Vector grad_wrt_injection(const TinyLM& model, const TokenSeq& tokens,
                          std::size_t pos, const Vector& v, int target,
                          std::size_t target_pos);

// Returns a copy with position-embedding rows copied per `mode` and the
// config's pos_swap field set to it. `off` returns an unmodified copy.
TinyLM apply_pos_swap(const TinyLM& model, PosSwap mode);

// Returns a copy whose config.bos_mode is `mode`; weights are untouched.
TinyLM with_bos_mode(const TinyLM& model, BosMode mode);

void save_model(const std::filesystem::path& path, const TinyLM& model);
TinyLM load_model(const std::filesystem::path& path);

}  // namespace romelab
