#include <doctest.h>

#include <cmath>

#include "romelab/diagnostics.hpp"
#include "romelab/errors.hpp"
#include "romelab/rng.hpp"
#include "test_utils.hpp"

using namespace romelab;
using namespace romelab::testutil;

TEST_CASE("cluster_distance basics") {
  std::vector<Vector> same(4, Vector{1.0, 2.0});
  CHECK(cluster_distance(same) == 0.0);

  std::vector<Vector> two = {{0.0, 0.0}, {2.0, 0.0}};
  CHECK(cluster_distance(two) == doctest::Approx(1.0));

  CHECK_THROWS_AS(cluster_distance({}), EmptyInput);
}

TEST_CASE("cluster_distance matches a two-pass oracle") {
  Rng rng(1);
  std::vector<Vector> pts;
  for (int i = 0; i < 50; ++i) {
    Vector v(16);
    for (double& x : v) x = rng.next_gaussian();
    pts.push_back(v);
  }
  Vector centroid(16, 0.0);
  for (const auto& p : pts)
    for (std::size_t j = 0; j < 16; ++j) centroid[j] += p[j];
  for (double& c : centroid) c /= 50.0;
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += norm2(sub(p, centroid)) / 50.0;

  CHECK(cluster_distance(pts) == doctest::Approx(mean_dist).epsilon(1e-12));
}

TEST_CASE("cluster_distance is translation invariant and scales linearly") {
  Rng rng(2);
  std::vector<Vector> pts, shifted, scaled;
  Vector shift(8);
  for (double& x : shift) x = rng.next_gaussian();
  for (int i = 0; i < 20; ++i) {
    Vector v(8);
    for (double& x : v) x = rng.next_gaussian();
    pts.push_back(v);
    shifted.push_back(add(v, shift));
    scaled.push_back(scale(v, 3.5));
  }
  const double d = cluster_distance(pts);
  CHECK(cluster_distance(shifted) == doctest::Approx(d).epsilon(1e-9));
  CHECK(cluster_distance(scaled) == doctest::Approx(3.5 * d).epsilon(1e-9));
}

namespace {

ModelConfig diag_config() {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.vocab_size = 257;
  c.max_seq = 16;
  c.edited_layer = 2;
  return c;
}

}  // namespace

TEST_CASE("layer_profile on identical prompts has zero first-token spread") {
  TinyLM m = TinyLM::random_init(diag_config(), 3);
  std::vector<TokenSeq> prompts(4, TokenSeq{10, 20, 30});
  ConcentrationProfile p = layer_profile(m, prompts);
  REQUIRE(p.layers.size() == 3);  // layers 0..edited_layer
  for (double d : p.d_first) CHECK(d == 0.0);
}

TEST_CASE("layer_profile matches recaptured activations") {
  TinyLM m = TinyLM::random_init(diag_config(), 4);
  std::vector<TokenSeq> prompts = {{1, 2, 3}, {9, 8, 7, 6}, {42, 42}};
  ConcentrationProfile p = layer_profile(m, prompts);

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    std::vector<Vector> firsts, subsequents;
    for (const auto& prompt : prompts) {
      ForwardTrace tr = forward(m, prompt, true);
      firsts.push_back(tr.per_layer_keys[li][tr.index(0)]);
      for (std::size_t t = 1; t < prompt.size(); ++t) {
        subsequents.push_back(tr.per_layer_keys[li][tr.index(t)]);
      }
    }
    CHECK(p.d_first[li] == doctest::Approx(cluster_distance(firsts)).epsilon(1e-10));
    CHECK(p.d_subsequent[li] ==
          doctest::Approx(cluster_distance(subsequents)).epsilon(1e-10));
  }
}

TEST_CASE("layer_profile single prompt") {
  TinyLM m = TinyLM::random_init(diag_config(), 5);
  ConcentrationProfile p = layer_profile(m, {TokenSeq{5, 6, 7, 8}});
  for (double d : p.d_first) CHECK(d == 0.0);
  for (double d : p.d_subsequent) CHECK(d >= 0.0);
}

namespace {

KeyBundle make_bundle(const Vector& k_bar, const Vector& k_u) {
  KeyBundle b;
  b.k_bar = k_bar;
  b.k_u = k_u;
  b.per_prefix_keys = {k_bar};
  b.subject_tokens = {1};
  b.subject_last_index = 0;
  return b;
}

}  // namespace

TEST_CASE("key_divergence with identical populations is zero") {
  Rng rng(6);
  SecondMoment sm;
  sm.c = Matrix::identity(6);
  sm.layer = 0;
  std::vector<KeyBundle> bundles;
  for (int i = 0; i < 4; ++i) {
    Vector k(6);
    for (double& x : k) x = rng.next_gaussian();
    bundles.push_back(make_bundle(k, k));
  }
  KeyDivergence d = key_divergence(bundles, sm);
  CHECK(d.centroid_distance_keys == doctest::Approx(0.0));
  for (double c : d.cosine_keys) CHECK(c == doctest::Approx(1.0));
  CHECK(d.pca_k_bar.size() == 4);
  CHECK(d.pca_cinv_k_u.size() == 4);
}

TEST_CASE("translated populations report the translation norm") {
  Rng rng(7);
  SecondMoment sm;
  sm.c = Matrix::identity(5);
  sm.layer = 0;
  Vector shift(5);
  for (double& x : shift) x = rng.next_gaussian();
  std::vector<KeyBundle> bundles;
  for (int i = 0; i < 6; ++i) {
    Vector k(5);
    for (double& x : k) x = rng.next_gaussian();
    bundles.push_back(make_bundle(add(k, shift), k));
  }
  KeyDivergence d = key_divergence(bundles, sm);
  CHECK(d.centroid_distance_keys == doctest::Approx(norm2(shift)).epsilon(1e-9));
}

TEST_CASE("key_divergence matches direct recomputation") {
  Rng rng(8);
  const std::size_t dim = 7;
  Matrix root(dim, dim);
  for (double& x : root.data()) x = rng.next_gaussian();
  SecondMoment sm;
  sm.c = matmul(root, transpose(root));
  for (std::size_t i = 0; i < dim; ++i) sm.c(i, i) += 1.0;
  sm.layer = 0;

  std::vector<KeyBundle> bundles;
  for (int i = 0; i < 5; ++i) {
    Vector a(dim), b(dim);
    for (double& x : a) x = rng.next_gaussian();
    for (double& x : b) x = rng.next_gaussian();
    bundles.push_back(make_bundle(a, b));
  }
  KeyDivergence d = key_divergence(bundles, sm);

  Vector mean_bar(dim, 0.0), mean_u(dim, 0.0), mean_solved(dim, 0.0);
  for (const auto& b : bundles) {
    Vector q = solve_spd(sm.c, b.k_bar);
    for (std::size_t i = 0; i < dim; ++i) {
      mean_bar[i] += b.k_bar[i] / 5.0;
      mean_u[i] += b.k_u[i] / 5.0;
      mean_solved[i] += q[i] / 5.0;
    }
  }
  CHECK(d.centroid_distance_keys ==
        doctest::Approx(norm2(sub(mean_bar, mean_u))).epsilon(1e-10));
  CHECK(d.centroid_distance_solved ==
        doctest::Approx(norm2(sub(mean_solved, mean_u))).epsilon(1e-10));
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    CHECK(d.cosine_keys[i] ==
          doctest::Approx(dot(b.k_bar, b.k_u) / (norm2(b.k_bar) * norm2(b.k_u)))
              .epsilon(1e-12));
  }

  // symmetry of the centroid distance in its two populations
  std::vector<KeyBundle> swapped;
  for (const auto& b : bundles) swapped.push_back(make_bundle(b.k_u, b.k_bar));
  KeyDivergence ds = key_divergence(swapped, sm);
  CHECK(ds.centroid_distance_keys == doctest::Approx(d.centroid_distance_keys));
}

namespace {

EditOutcome fake_outcome(double denominator, double num_norm) {
  EditOutcome o;
  o.denominator = denominator;
  o.numerator = Matrix(1, 1);
  o.numerator(0, 0) = num_norm;
  o.delta = Matrix(1, 1);
  o.delta(0, 0) = num_norm / denominator;
  o.w_hat = o.delta;
  o.mode = EditMode::rome_inconsistent;
  return o;
}

}  // namespace

TEST_CASE("denominator_stats single outcome and group means") {
  EditOutcome a = fake_outcome(1.0, 2.0);
  DenominatorReport r1 = denominator_stats({{"a", &a, "normal"}});
  REQUIRE(r1.rows.size() == 1);
  REQUIRE(r1.groups.size() == 1);
  CHECK(r1.groups[0].mean_abs_denominator == doctest::Approx(1.0));
  CHECK(r1.groups[0].mean_numerator_norm == doctest::Approx(2.0));

  EditOutcome b = fake_outcome(3.0, 4.0);
  EditOutcome c = fake_outcome(-1.0, 1.0);
  DenominatorReport r2 = denominator_stats(
      {{"a", &a, "g1"}, {"b", &b, "g1"}, {"c", &c, "g2"}});
  REQUIRE(r2.groups.size() == 2);
  CHECK(r2.groups[0].group == "g1");
  CHECK(r2.groups[0].mean_abs_denominator == doctest::Approx(2.0));
  CHECK(r2.groups[1].mean_abs_denominator == doctest::Approx(1.0));

  // aggregates equal recomputed means of the rows
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& row : r2.rows) {
    if (row.group == "g1") {
      mean += row.abs_denominator;
      ++n;
    }
  }
  CHECK(r2.groups[0].mean_abs_denominator == doctest::Approx(mean / n));
}

TEST_CASE("smaller denominators mean larger deltas at comparable numerators") {
  EditOutcome small_den = fake_outcome(0.05, 2.0);
  EditOutcome large_den = fake_outcome(5.0, 2.5);
  DenominatorReport r = denominator_stats(
      {{"c0", &small_den, "collapse"}, {"n0", &large_den, "normal"}});
  const auto& collapse = r.groups[0];
  const auto& normal = r.groups[1];
  REQUIRE(collapse.group == "collapse");
  CHECK(collapse.mean_abs_denominator < normal.mean_abs_denominator);
  CHECK(collapse.mean_delta_norm > normal.mean_delta_norm);
}

TEST_CASE("collapse_risk thresholds") {
  EditOutcome o = fake_outcome(1.0, 1.0);
  CollapseRiskResult r = collapse_risk(o, 1.0);
  CHECK(r.risk == CollapseRisk::low);
  CHECK(r.ratio == doctest::Approx(1.0));

  o.denominator = 0.001;
  r = collapse_risk(o, 1.0);
  CHECK(r.risk == CollapseRisk::high);

  // exactly at the threshold stays low (strict less-than)
  o.denominator = 0.02;
  r = collapse_risk(o, 1.0);
  CHECK(r.risk == CollapseRisk::low);

  CHECK_THROWS_AS(collapse_risk(o, 0.0), ConfigInvalid);
}
