#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "romelab/linalg.hpp"
#include "romelab/model.hpp"

namespace romelab {

enum class PrefixSource { model_generated, random_bytes, user_supplied };

std::string to_string(PrefixSource s);
PrefixSource prefix_source_from_string(const std::string& s);

struct PrefixSet {
  std::vector<TokenSeq> prefixes;
  std::uint64_t seed = 0;
  PrefixSource source = PrefixSource::user_supplied;
};

struct KeyBundle {
  Vector k_bar;                        // mean key over prefixed runs
  Vector k_u;                          // key of the bare subject
  std::vector<Vector> per_prefix_keys;
  TokenSeq subject_tokens;
  std::size_t subject_last_index = 0;  // within the bare subject
};

// Pre-cached key second moment for one layer: C = mean(k k^T) + ridge * I.
struct SecondMoment {
  Matrix c;
  std::size_t sample_count = 0;
  double ridge = 0.0;
  std::size_t layer = 0;
};

// Key of the bare subject: forward on the subject alone (honoring bos_mode),
// tapped at the last subject token.
Vector unprefixed_key(const TinyLM& model, const TokenSeq& subject);

// For each prefix x_i, forwards x_i (+) subject and reads the tapped key at
// the last subject token; k_bar is the arithmetic mean. Also computes k_u.
KeyBundle prefixed_key(const TinyLM& model, const TokenSeq& subject,
                       const PrefixSet& prefixes);

// Deterministic given seed. model_generated samples continuations from the
// model (temperature 1.0, byte tokens only) starting at a uniformly drawn
// byte; random_bytes draws uniform bytes. Prefix lengths are drawn uniformly
// from [min_len, max_len].
PrefixSet sample_prefixes(const TinyLM& model, std::size_t n, std::size_t min_len,
                          std::size_t max_len, std::uint64_t seed,
                          PrefixSource source = PrefixSource::model_generated);

inline PrefixSet sample_prefixes(const TinyLM& model, std::size_t n,
                                 std::size_t length, std::uint64_t seed) {
  return sample_prefixes(model, n, length, length, seed);
}

// C = (1/M) sum over tapped keys of corpus windows of k k^T, plus ridge * I.
// When ridge_relative is set, the ridge is ridge * mean(diagonal) of the raw
// moment; the stored SecondMoment carries the resolved absolute value.
SecondMoment estimate_second_moment(const TinyLM& model, const TokenSeq& corpus,
                                    std::size_t layer, double ridge,
                                    std::size_t max_samples,
                                    bool ridge_relative = false,
                                    std::size_t window = 64);

void save_second_moment(const std::filesystem::path& path, const SecondMoment& sm);
SecondMoment load_second_moment(const std::filesystem::path& path);

}  // namespace romelab
