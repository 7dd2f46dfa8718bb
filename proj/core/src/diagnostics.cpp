#include "romelab/diagnostics.hpp"

#include <cmath>

#include "romelab/errors.hpp"

namespace romelab {

double cluster_distance(const std::vector<Vector>& embeddings) {
  if (embeddings.empty()) throw EmptyInput("cluster_distance: no embeddings");
  const std::size_t dim = embeddings[0].size();
  Vector centroid(dim, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw DimensionMismatch("cluster_distance: ragged input");
    for (std::size_t i = 0; i < dim; ++i) centroid[i] += e[i];
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (double& c : centroid) c *= inv;

  double total = 0.0;
  for (const auto& e : embeddings) total += norm2(sub(e, centroid));
  return total * inv;
}

ConcentrationProfile layer_profile(const TinyLM& model,
                                   const std::vector<TokenSeq>& prompts,
                                   bool all_layers) {
  if (prompts.empty()) throw EmptyInput("layer_profile: no prompts");
  for (const auto& p : prompts) {
    if (p.size() < 2) throw EmptyInput("layer_profile: prompts must have length >= 2");
  }
  const auto& cfg = model.config;
  const std::size_t last_layer = all_layers ? cfg.n_layers - 1 : cfg.edited_layer;

  // [layer] -> key vectors; firsts get one entry per prompt
  std::vector<std::vector<Vector>> firsts(last_layer + 1);
  std::vector<std::vector<Vector>> subsequents(last_layer + 1);

  for (const auto& prompt : prompts) {
    ForwardTrace tr = forward(model, prompt, /*capture_all_layers=*/true);
    for (std::size_t l = 0; l <= last_layer; ++l) {
      firsts[l].push_back(tr.per_layer_keys[l][tr.index(0)]);
      for (std::size_t t = 1; t < prompt.size(); ++t) {
        subsequents[l].push_back(tr.per_layer_keys[l][tr.index(t)]);
      }
    }
  }

  ConcentrationProfile profile;
  for (std::size_t l = 0; l <= last_layer; ++l) {
    profile.layers.push_back(l);
    profile.d_first.push_back(cluster_distance(firsts[l]));
    profile.d_subsequent.push_back(cluster_distance(subsequents[l]));
  }
  return profile;
}

namespace {

Vector centroid_of(const std::vector<Vector>& points) {
  Vector c(points[0].size(), 0.0);
  for (const auto& p : points) {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  for (double& x : c) x *= inv;
  return c;
}

double cosine(const Vector& a, const Vector& b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace

KeyDivergence key_divergence(const std::vector<KeyBundle>& bundles,
                             const SecondMoment& c) {
  if (bundles.size() < 2) {
    throw EmptyInput("key_divergence: need at least two bundles");
  }
  CholeskyFactor chol(c.c);

  std::vector<Vector> k_bars, k_us, solved_bars, solved_us;
  k_bars.reserve(bundles.size());
  for (const auto& b : bundles) {
    k_bars.push_back(b.k_bar);
    k_us.push_back(b.k_u);
    solved_bars.push_back(chol.solve(b.k_bar));
    solved_us.push_back(chol.solve(b.k_u));
  }

  KeyDivergence out;
  out.centroid_distance_keys = norm2(sub(centroid_of(k_bars), centroid_of(k_us)));
  out.centroid_distance_solved =
      norm2(sub(centroid_of(solved_bars), centroid_of(k_us)));
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    out.cosine_keys.push_back(cosine(k_bars[i], k_us[i]));
    out.cosine_solved.push_back(cosine(solved_bars[i], k_us[i]));
  }

  // joint projection so the four populations share one coordinate system
  std::vector<Vector> all;
  all.reserve(4 * bundles.size());
  for (const auto& v : k_bars) all.push_back(v);
  for (const auto& v : k_us) all.push_back(v);
  for (const auto& v : solved_bars) all.push_back(v);
  for (const auto& v : solved_us) all.push_back(v);
  std::vector<Vector> proj = pca_project(all, 2);

  const std::size_t n = bundles.size();
  out.pca_k_bar.assign(proj.begin(), proj.begin() + n);
  out.pca_k_u.assign(proj.begin() + n, proj.begin() + 2 * n);
  out.pca_cinv_k_bar.assign(proj.begin() + 2 * n, proj.begin() + 3 * n);
  out.pca_cinv_k_u.assign(proj.begin() + 3 * n, proj.begin() + 4 * n);
  return out;
}

DenominatorReport denominator_stats(const std::vector<LabeledOutcome>& outcomes) {
  if (outcomes.empty()) throw EmptyInput("denominator_stats: no outcomes");
  DenominatorReport report;
  for (const auto& lo : outcomes) {
    DenominatorRow row;
    row.case_id = lo.case_id;
    row.group = lo.group;
    row.mode = lo.outcome->mode;
    row.abs_denominator = std::fabs(lo.outcome->denominator);
    row.numerator_norm = frobenius_norm(lo.outcome->numerator);
    row.delta_norm = frobenius_norm(lo.outcome->delta);
    report.rows.push_back(std::move(row));
  }

  for (const auto& row : report.rows) {
    DenominatorGroupStats* stats = nullptr;
    for (auto& g : report.groups) {
      if (g.group == row.group) {
        stats = &g;
        break;
      }
    }
    if (stats == nullptr) {
      report.groups.push_back({row.group, 0, 0.0, 0.0, 0.0});
      stats = &report.groups.back();
    }
    stats->count += 1;
    stats->mean_abs_denominator += row.abs_denominator;
    stats->mean_numerator_norm += row.numerator_norm;
    stats->mean_delta_norm += row.delta_norm;
  }
  for (auto& g : report.groups) {
    const double inv = 1.0 / static_cast<double>(g.count);
    g.mean_abs_denominator *= inv;
    g.mean_numerator_norm *= inv;
    g.mean_delta_norm *= inv;
  }
  return report;
}

CollapseRiskResult collapse_risk(const EditOutcome& outcome,
                                 double baseline_denominator, double threshold) {
  if (!(baseline_denominator > 0.0)) {
    throw ConfigInvalid("collapse_risk: baseline must be positive");
  }
  CollapseRiskResult res;
  res.ratio = std::fabs(outcome.denominator) / baseline_denominator;
  res.risk = res.ratio < threshold ? CollapseRisk::high : CollapseRisk::low;
  return res;
}

}  // namespace romelab
