#pragma once

#include <string>
#include <vector>

#include "romelab/editor.hpp"
#include "romelab/keyspace.hpp"
#include "romelab/linalg.hpp"
#include "romelab/model.hpp"

namespace romelab {

// Mean Euclidean distance of the embeddings to their centroid.
double cluster_distance(const std::vector<Vector>& embeddings);

struct ConcentrationProfile {
  std::vector<std::size_t> layers;
  std::vector<double> d_first;       // distance metric over first prompt tokens
  std::vector<double> d_subsequent;  // over all subsequent prompt tokens
};

// Per-layer concentration of tapped keys: D over the first token of each
// prompt (one vector per prompt) vs D over all subsequent tokens pooled.
// Covers layers 0..edited_layer by default, all layers when requested.
ConcentrationProfile layer_profile(const TinyLM& model,
                                   const std::vector<TokenSeq>& prompts,
                                   bool all_layers = false);

struct KeyDivergence {
  // population comparisons: prefixed vs unprefixed keys, and the solved
  // C^{-1} k_bar vs the unprefixed keys
  double centroid_distance_keys = 0.0;
  double centroid_distance_solved = 0.0;
  std::vector<double> cosine_keys;    // per case, cos(k_bar_i, k_u_i)
  std::vector<double> cosine_solved;  // per case, cos(C^{-1} k_bar_i, k_u_i)

  // joint 2-D PCA coordinates of the four populations for plotting
  std::vector<Vector> pca_k_bar, pca_k_u, pca_cinv_k_bar, pca_cinv_k_u;
};

KeyDivergence key_divergence(const std::vector<KeyBundle>& bundles,
                             const SecondMoment& c);

struct LabeledOutcome {
  std::string case_id;
  const EditOutcome* outcome = nullptr;
  std::string group;
};

struct DenominatorRow {
  std::string case_id;
  std::string group;
  EditMode mode = EditMode::c_rome;
  double abs_denominator = 0.0;
  double numerator_norm = 0.0;
  double delta_norm = 0.0;
};

struct DenominatorGroupStats {
  std::string group;
  std::size_t count = 0;
  double mean_abs_denominator = 0.0;
  double mean_numerator_norm = 0.0;
  double mean_delta_norm = 0.0;
};

struct DenominatorReport {
  std::vector<DenominatorRow> rows;
  std::vector<DenominatorGroupStats> groups;  // in first-appearance order
};

DenominatorReport denominator_stats(const std::vector<LabeledOutcome>& outcomes);

enum class CollapseRisk { low, high };

struct CollapseRiskResult {
  CollapseRisk risk = CollapseRisk::low;
  double ratio = 0.0;
};

// high iff |denominator| / baseline < threshold (strict).
CollapseRiskResult collapse_risk(const EditOutcome& outcome,
                                 double baseline_denominator,
                                 double threshold = 0.02);

}  // namespace romelab
