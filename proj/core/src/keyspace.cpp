#include "romelab/keyspace.hpp"

#include <cmath>
#include <string>

#include "romelab/container.hpp"
#include "romelab/errors.hpp"
#include "romelab/rng.hpp"

namespace romelab {

std::string to_string(PrefixSource s) {
  switch (s) {
    case PrefixSource::model_generated: return "model_generated";
    case PrefixSource::random_bytes: return "random_bytes";
    default: return "user_supplied";
  }
}

PrefixSource prefix_source_from_string(const std::string& s) {
  if (s == "model_generated") return PrefixSource::model_generated;
  if (s == "random_bytes") return PrefixSource::random_bytes;
  if (s == "user_supplied") return PrefixSource::user_supplied;
  throw ConfigInvalid("unknown prefix source: " + s);
}

Vector unprefixed_key(const TinyLM& model, const TokenSeq& subject) {
  if (subject.empty()) throw EmptyInput("unprefixed_key: empty subject");
  ForwardTrace tr = forward(model, subject);
  return tr.tapped_keys[tr.index(subject.size() - 1)];
}

KeyBundle prefixed_key(const TinyLM& model, const TokenSeq& subject,
                       const PrefixSet& prefixes) {
  if (subject.empty()) throw EmptyInput("prefixed_key: empty subject");
  if (prefixes.prefixes.empty()) {
    throw EmptyInput("prefixed_key: prefix set must hold at least one prefix");
  }
  KeyBundle bundle;
  bundle.subject_tokens = subject;
  bundle.subject_last_index = subject.size() - 1;
  bundle.per_prefix_keys.reserve(prefixes.prefixes.size());

  const std::size_t m = model.config.mlp_dim();
  Vector sum(m, 0.0);
  for (const auto& prefix : prefixes.prefixes) {
    TokenSeq seq;
    seq.reserve(prefix.size() + subject.size());
    seq.insert(seq.end(), prefix.begin(), prefix.end());
    seq.insert(seq.end(), subject.begin(), subject.end());
    ForwardTrace tr = forward(model, seq);
    Vector key = tr.tapped_keys[tr.index(seq.size() - 1)];
    for (std::size_t i = 0; i < m; ++i) sum[i] += key[i];
    bundle.per_prefix_keys.push_back(std::move(key));
  }
  const double inv = 1.0 / static_cast<double>(bundle.per_prefix_keys.size());
  bundle.k_bar = scale(sum, inv);
  bundle.k_u = unprefixed_key(model, subject);
  return bundle;
}

PrefixSet sample_prefixes(const TinyLM& model, std::size_t n, std::size_t min_len,
                          std::size_t max_len, std::uint64_t seed,
                          PrefixSource source) {
  if (n < 1 || min_len < 1 || max_len < min_len) {
    throw ConfigInvalid("sample_prefixes: need n >= 1 and 1 <= min_len <= max_len");
  }
  PrefixSet set;
  set.seed = seed;
  set.source = source;
  set.prefixes.reserve(n);
  Rng rng(seed);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len =
        min_len + static_cast<std::size_t>(rng.next_below(max_len - min_len + 1));
    TokenSeq prefix;
    prefix.reserve(len);
    if (source == PrefixSource::random_bytes) {
      for (std::size_t j = 0; j < len; ++j) {
        prefix.push_back(static_cast<int>(rng.next_below(256)));
      }
    } else {
      // model_generated: uniform start byte, then temperature-1.0 sampling
      // restricted to byte tokens (the BOS id is never emitted into a prefix)
      prefix.push_back(static_cast<int>(rng.next_below(256)));
      while (prefix.size() < len) {
        ForwardTrace tr = forward(model, prefix);
        const Vector& z = tr.logits[tr.processed_tokens.size() - 1];
        double mx = z[0];
        for (std::size_t v = 1; v < 256; ++v) mx = std::max(mx, z[v]);
        double total = 0.0;
        Vector probs(256);
        for (std::size_t v = 0; v < 256; ++v) {
          probs[v] = std::exp(z[v] - mx);
          total += probs[v];
        }
        const double u = rng.next_double() * total;
        double acc = 0.0;
        int pick = 255;
        for (std::size_t v = 0; v < 256; ++v) {
          acc += probs[v];
          if (u < acc) {
            pick = static_cast<int>(v);
            break;
          }
        }
        prefix.push_back(pick);
      }
    }
    set.prefixes.push_back(std::move(prefix));
  }
  return set;
}

SecondMoment estimate_second_moment(const TinyLM& model, const TokenSeq& corpus,
                                    std::size_t layer, double ridge,
                                    std::size_t max_samples, bool ridge_relative,
                                    std::size_t window) {
  const auto& cfg = model.config;
  if (corpus.empty()) throw CorpusTooSmall("estimate_second_moment: empty corpus");
  if (!(ridge > 0.0)) throw ConfigInvalid("estimate_second_moment: ridge must be > 0");
  if (layer >= cfg.n_layers) throw ConfigInvalid("estimate_second_moment: layer out of range");
  if (max_samples == 0) throw ConfigInvalid("estimate_second_moment: max_samples must be > 0");

  const std::size_t off = cfg.bos_mode == BosMode::prepend ? 1 : 0;
  const std::size_t w = std::min(window, cfg.max_seq - off);
  if (w == 0) throw ConfigInvalid("estimate_second_moment: window does not fit max_seq");

  const std::size_t m = cfg.mlp_dim();
  const bool need_all = layer != cfg.edited_layer;
  Matrix accum(m, m);
  std::size_t count = 0;

  for (std::size_t start = 0; start < corpus.size() && count < max_samples; start += w) {
    const std::size_t len = std::min(w, corpus.size() - start);
    TokenSeq chunk(corpus.begin() + start, corpus.begin() + start + len);
    ForwardTrace tr = forward(model, chunk, need_all);
    for (std::size_t t = 0; t < len && count < max_samples; ++t) {
      const Vector& key = need_all ? tr.per_layer_keys[layer][tr.index(t)]
                                   : tr.tapped_keys[tr.index(t)];
      // upper triangle only; mirrored below for exact symmetry
      for (std::size_t i = 0; i < m; ++i) {
        const double ki = key[i];
        double* row = accum.row(i);
        for (std::size_t j = i; j < m; ++j) row[j] += ki * key[j];
      }
      ++count;
    }
  }

  const double inv = 1.0 / static_cast<double>(count);
  double diag_mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const double v = accum(i, j) * inv;
      accum(i, j) = v;
      accum(j, i) = v;
    }
    diag_mean += accum(i, i);
  }
  diag_mean /= static_cast<double>(m);

  const double eps = ridge_relative ? ridge * diag_mean : ridge;
  if (!(eps > 0.0)) {
    throw ConfigInvalid("estimate_second_moment: resolved ridge is not positive");
  }
  for (std::size_t i = 0; i < m; ++i) accum(i, i) += eps;
  ensure_finite(accum, "estimate_second_moment: C");

  SecondMoment sm;
  sm.c = std::move(accum);
  sm.sample_count = count;
  sm.ridge = eps;
  sm.layer = layer;
  return sm;
}

void save_second_moment(const std::filesystem::path& path, const SecondMoment& sm) {
  Container c;
  c.metadata["kind"] = "second_moment";
  c.metadata["sample_count"] = sm.sample_count;
  c.metadata["ridge"] = sm.ridge;
  c.metadata["layer"] = sm.layer;
  NamedTensor t;
  t.name = "c";
  t.shape = {static_cast<std::uint64_t>(sm.c.rows()),
             static_cast<std::uint64_t>(sm.c.cols())};
  t.data = sm.c.data();
  c.tensors.push_back(std::move(t));
  save_container(path, c);
}

SecondMoment load_second_moment(const std::filesystem::path& path) {
  Container c = load_container(path);
  if (c.metadata.value("kind", "") != "second_moment") {
    throw IoError("not a second-moment container: " + path.string());
  }
  const NamedTensor* t = c.find("c");
  if (t == nullptr || t->shape.size() != 2 || t->shape[0] != t->shape[1]) {
    throw IoError("second-moment container malformed: " + path.string());
  }
  SecondMoment sm;
  sm.sample_count = c.metadata.at("sample_count").get<std::size_t>();
  sm.ridge = c.metadata.at("ridge").get<double>();
  sm.layer = c.metadata.at("layer").get<std::size_t>();
  const std::size_t n = t->shape[0];
  sm.c = Matrix(n, n);
  sm.c.data() = t->data;
  return sm;
}

}  // namespace romelab
