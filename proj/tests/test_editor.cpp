#include <doctest.h>

#include <cmath>

#include "romelab/editor.hpp"
#include "romelab/errors.hpp"
#include "romelab/eval.hpp"
#include "romelab/rng.hpp"
#include "test_utils.hpp"

using namespace romelab;
using namespace romelab::testutil;

namespace {

ModelConfig edit_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.vocab_size = 257;
  c.max_seq = 32;
  c.edited_layer = 0;  // a layer above the edit lets the value reach later positions
  return c;
}

EditRequest simple_request(EditMode mode) {
  EditRequest r;
  r.id = "t0";
  r.subject_tokens = {65};
  r.prompt_tokens = {65, 32, 105, 115, 32};  // "A is "
  r.subject_span_begin = 0;
  r.subject_span_len = 1;
  r.old_object = 70;
  r.new_object = 77;
  r.prefixes.prefixes = {TokenSeq{1, 2}, TokenSeq{3}, TokenSeq{4, 5, 6}};
  r.mode = mode;
  return r;
}

SecondMoment identity_moment(std::size_t n) {
  SecondMoment sm;
  sm.c = Matrix::identity(n);
  sm.sample_count = 1;
  sm.ridge = 1.0;
  sm.layer = 0;
  return sm;
}

// Equality-constrained least squares via the per-row KKT system, solved with
// Gauss-Jordan elimination. Fully independent of the Cholesky-based path.
Matrix kkt_constrained_minimizer(const Matrix& k_mat, const Matrix& v_mat,
                                 const Vector& k_bar, const Vector& v_star) {
  const std::size_t d_in = k_mat.rows();
  const std::size_t d_out = v_mat.rows();
  Matrix kkt(d_in + 1, d_in + 1);
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = 0; j < d_in; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < k_mat.cols(); ++n) s += k_mat(i, n) * k_mat(j, n);
      kkt(i, j) = s;
    }
    kkt(i, d_in) = k_bar[i];
    kkt(d_in, i) = k_bar[i];
  }
  Matrix w_hat(d_out, d_in);
  for (std::size_t r = 0; r < d_out; ++r) {
    Vector rhs(d_in + 1, 0.0);
    for (std::size_t i = 0; i < d_in; ++i) {
      double s = 0.0;
      for (std::size_t n = 0; n < k_mat.cols(); ++n) s += k_mat(i, n) * v_mat(r, n);
      rhs[i] = s;
    }
    rhs[d_in] = v_star[r];
    Vector sol = gauss_jordan_solve(kkt, rhs);
    for (std::size_t i = 0; i < d_in; ++i) w_hat(r, i) = sol[i];
  }
  return w_hat;
}

}  // namespace

TEST_CASE("rank_one_update hand example") {
  Matrix w(2, 2);
  SecondMoment sm = identity_moment(2);
  RankOneOutcome out = rank_one_update(w, sm, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, 0.0);
  CHECK(out.denominator == doctest::Approx(1.0));
  CHECK(out.numerator(0, 0) == doctest::Approx(1.0));
  CHECK(out.numerator(0, 1) == 0.0);
  CHECK(out.numerator(1, 0) == 0.0);
  CHECK(out.numerator(1, 1) == 0.0);
  CHECK(out.w_hat(0, 0) == doctest::Approx(1.0));
  CHECK(out.w_hat(1, 1) == 0.0);
}

TEST_CASE("no-op edit when v_star already equals W k_right") {
  Rng rng(1);
  Matrix w(3, 3);
  for (double& x : w.data()) x = rng.next_gaussian();
  Vector k = {0.3, -0.2, 0.9};
  SecondMoment sm = identity_moment(3);
  RankOneOutcome out = rank_one_update(w, sm, k, k, matvec(w, k), 0.0);
  CHECK(frobenius_norm(out.delta) < 1e-12);
  CHECK(max_abs_diff(out.w_hat, w) < 1e-12);
}

TEST_CASE("orthogonal keys trip the denominator floor") {
  Matrix w(2, 2);
  SecondMoment sm = identity_moment(2);
  CHECK_THROWS_AS(
      rank_one_update(w, sm, {1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, 1e-6),
      DenominatorBelowFloor);
  // exactly zero denominators are refused even with the floor disabled
  CHECK_THROWS_AS(rank_one_update(w, sm, {1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, 0.0),
                  DenominatorBelowFloor);
}

TEST_CASE("closed form matches the KKT constrained minimizer") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t d = 8;
    const std::size_t n = 3 * d;
    Matrix k_mat(d, n), v_mat(d, n);
    for (double& x : k_mat.data()) x = rng.next_gaussian();
    for (double& x : v_mat.data()) x = rng.next_gaussian();
    Vector k_bar(d), v_star(d);
    for (double& x : k_bar) x = rng.next_gaussian();
    for (double& x : v_star) x = rng.next_gaussian();

    // W = unconstrained least-squares fit of V on K
    Matrix kkT = matmul(k_mat, transpose(k_mat));
    Matrix w(d, d);
    for (std::size_t r = 0; r < d; ++r) {
      Vector rhs(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t c = 0; c < n; ++c) rhs[i] += k_mat(i, c) * v_mat(r, c);
      Vector row = gauss_jordan_solve(kkT, rhs);
      for (std::size_t i = 0; i < d; ++i) w(r, i) = row[i];
    }

    SecondMoment sm;
    sm.c = kkT;
    sm.sample_count = n;
    sm.ridge = 0.0;
    sm.layer = 0;

    RankOneOutcome closed = rank_one_update(w, sm, k_bar, k_bar, v_star, 0.0);
    Matrix oracle = kkt_constrained_minimizer(k_mat, v_mat, k_bar, v_star);
    CHECK(frobenius_norm(sub(closed.w_hat, oracle)) < 1e-5);
  }
}

TEST_CASE("constraint exactness for both modes on random instances") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d_in = 2 + rng.next_below(15);
    const std::size_t d_out = 2 + rng.next_below(15);
    Matrix m(d_in, d_in);
    for (double& x : m.data()) x = rng.next_gaussian();
    SecondMoment sm;
    sm.c = matmul(m, transpose(m));
    for (std::size_t i = 0; i < d_in; ++i) sm.c(i, i) += 1.0;
    sm.layer = 0;
    Matrix w(d_out, d_in);
    for (double& x : w.data()) x = rng.next_gaussian();
    Vector k_bar(d_in), k_right(d_in), v_star(d_out);
    for (double& x : k_bar) x = rng.next_gaussian();
    for (double& x : k_right) x = rng.next_gaussian();
    for (double& x : v_star) x = rng.next_gaussian();

    // random keys can be near-orthogonal; fall back to the consistent pair
    RankOneOutcome out;
    bool used_k_right = true;
    try {
      out = rank_one_update(w, sm, k_bar, k_right, v_star, 1e-6);
    } catch (const DenominatorBelowFloor&) {
      out = rank_one_update(w, sm, k_bar, k_bar, v_star, 1e-6);
      used_k_right = false;
    }
    // whichever key sat on the right: W_hat k_right must equal v_star
    Vector got = matvec(out.w_hat, used_k_right ? k_right : k_bar);
    CHECK(norm2(sub(got, v_star)) / norm2(v_star) <= 1e-8);
  }
}

TEST_CASE("delta has numeric rank one") {
  Rng rng(4);
  Matrix w(6, 5);
  for (double& x : w.data()) x = rng.next_gaussian();
  SecondMoment sm = identity_moment(5);
  Vector k_bar(5), v_star(6);
  for (double& x : k_bar) x = rng.next_gaussian();
  for (double& x : v_star) x = rng.next_gaussian();
  RankOneOutcome out = rank_one_update(w, sm, k_bar, k_bar, v_star, 0.0);
  CHECK(frobenius_norm(out.delta) > 1e-6);
  // every 2x2 minor vanishes
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = i + 1; k < 6; ++k)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t l = j + 1; l < 5; ++l) {
          const double minor = out.delta(i, j) * out.delta(k, l) -
                               out.delta(i, l) * out.delta(k, j);
          CHECK(std::fabs(minor) < 1e-9);
        }
}

TEST_CASE("delta is invariant to positive rescaling of C") {
  Rng rng(5);
  const std::size_t d = 6;
  Matrix m(d, d);
  for (double& x : m.data()) x = rng.next_gaussian();
  SecondMoment sm;
  sm.c = matmul(m, transpose(m));
  for (std::size_t i = 0; i < d; ++i) sm.c(i, i) += 1.0;
  Matrix w(d, d);
  for (double& x : w.data()) x = rng.next_gaussian();
  Vector k_bar(d), k_right(d), v_star(d);
  for (double& x : k_bar) x = rng.next_gaussian();
  for (double& x : k_right) x = rng.next_gaussian();
  for (double& x : v_star) x = rng.next_gaussian();

  RankOneOutcome base = rank_one_update(w, sm, k_bar, k_right, v_star, 0.0);
  for (double c : {0.25, 3.0, 117.0}) {
    SecondMoment scaled = sm;
    scaled.c = scale(sm.c, c);
    RankOneOutcome out = rank_one_update(w, scaled, k_bar, k_right, v_star, 0.0);
    CHECK(max_abs_diff(out.delta, base.delta) < 1e-9);
  }
}

TEST_CASE("denominator scales with the aligned component of k_right") {
  Rng rng(6);
  const std::size_t d = 8;
  Matrix m(d, d);
  for (double& x : m.data()) x = rng.next_gaussian();
  SecondMoment sm;
  sm.c = matmul(m, transpose(m));
  for (std::size_t i = 0; i < d; ++i) sm.c(i, i) += 1.0;
  Matrix w(d, d);  // zero: the numerator direction is then fixed
  Vector k_bar(d), v_star(d);
  for (double& x : k_bar) x = rng.next_gaussian();
  for (double& x : v_star) x = rng.next_gaussian();

  const Vector q = solve_spd(sm.c, k_bar);
  const double qn2 = dot(q, q);
  Vector k_right(d);
  for (double& x : k_right) x = rng.next_gaussian();
  const double along = dot(k_right, q) / qn2;

  RankOneOutcome base = rank_one_update(w, sm, k_bar, k_right, v_star, 0.0);
  for (double t : {0.1, 0.01}) {
    Vector kt(d);
    for (std::size_t i = 0; i < d; ++i) {
      kt[i] = k_right[i] + (t - 1.0) * along * q[i];
    }
    RankOneOutcome out = rank_one_update(w, sm, k_bar, kt, v_star, 0.0);
    CHECK(std::fabs(out.denominator / base.denominator - t) < 0.01 * t);
    const double norm_ratio = frobenius_norm(out.delta) / frobenius_norm(base.delta);
    CHECK(std::fabs(norm_ratio - 1.0 / t) < 0.05 / t);
  }
}

TEST_CASE("optimize_value with zero steps returns the original value") {
  TinyLM m = TinyLM::random_init(edit_config(), 7);
  EditRequest req = simple_request(EditMode::c_rome);
  ValueSearchConfig cfg;
  cfg.steps = 0;
  ValueSearchResult res = optimize_value(m, req, cfg);
  CHECK(bit_equal(res.v_star, res.v0));
  CHECK(res.loss_curve.empty());

  ForwardTrace tr = forward(m, req.prompt_tokens);
  CHECK(bit_equal(res.v0, tr.tapped_values[tr.index(req.subject_last_pos())]));
}

TEST_CASE("optimize_value reduces the target NLL and settles") {
  TinyLM m = TinyLM::random_init(edit_config(), 8);
  EditRequest req = simple_request(EditMode::c_rome);
  ValueSearchConfig cfg;
  cfg.steps = 60;
  cfg.learning_rate = 0.3;
  ValueSearchResult res = optimize_value(m, req, cfg);
  REQUIRE(res.loss_curve.size() == 60);

  // smoothed curve is non-increasing over the last half
  auto smooth = [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 5; ++j) s += res.loss_curve[j];
    return s / 5.0;
  };
  for (std::size_t i = 30; i + 6 < 60; ++i) {
    CHECK(smooth(i + 1) <= smooth(i) + 1e-9);
  }

  // the optimized value beats the original on the target NLL
  const std::size_t pos = req.subject_last_pos(), tpos = req.target_pos();
  ForwardTrace t0 = forward_with_injection(m, req.prompt_tokens, pos, res.v0);
  ForwardTrace t1 = forward_with_injection(m, req.prompt_tokens, pos, res.v_star);
  const double nll0 = nll_from_logits(t0.logits[t0.index(tpos)], req.new_object);
  const double nll1 = nll_from_logits(t1.logits[t1.index(tpos)], req.new_object);
  CHECK(nll1 < nll0);
}

TEST_CASE("edit satisfies its own constraint and reverts cleanly") {
  TinyLM m = TinyLM::random_init(edit_config(), 9);
  TokenSeq corpus;
  for (int i = 0; i < 64; ++i) corpus.push_back((i * 37) % 256);
  SecondMoment sm = estimate_second_moment(m, corpus, 0, 1e-4, 1u << 20, true, 16);

  for (EditMode mode : {EditMode::rome_inconsistent, EditMode::c_rome}) {
    EditRequest req = simple_request(mode);
    EditResult res = edit(m, req, sm, ValueSearchConfig{});
    CHECK(res.outcome.mode == mode);

    const Vector& k_right = mode == EditMode::c_rome ? res.outcome.key_bundle.k_bar
                                                     : res.outcome.key_bundle.k_u;
    Vector got = matvec(res.outcome.w_hat, k_right);
    CHECK(norm2(sub(got, res.outcome.v_star)) / norm2(res.outcome.v_star) <= 1e-8);

    // the original model is untouched and revert restores bits
    CHECK(max_abs_diff(m.layers[0].w_down, res.model.layers[0].w_down) > 0.0);
    TinyLM reverted = revert(res.model, m.layers[0].w_down);
    ForwardTrace a = forward(m, req.prompt_tokens);
    ForwardTrace b = forward(reverted, req.prompt_tokens);
    for (std::size_t t = 0; t < req.prompt_tokens.size(); ++t) {
      CHECK(bit_equal(a.logits[t], b.logits[t]));
    }
    TokenSeq probe;
    for (int i = 0; i < 24; ++i) probe.push_back((i * 13) % 256);
    CHECK(perplexity(m, probe) == perplexity(reverted, probe));

    // reverting an unedited model is a no-op
    TinyLM same = revert(m, m.layers[0].w_down);
    CHECK(max_abs_diff(same.layers[0].w_down, m.layers[0].w_down) == 0.0);
  }
}

TEST_CASE("c_rome edit with one prefix pins the tapped value to v_star") {
  TinyLM m = TinyLM::random_init(edit_config(), 10);
  TokenSeq corpus;
  for (int i = 0; i < 64; ++i) corpus.push_back((i * 41) % 256);
  SecondMoment sm = estimate_second_moment(m, corpus, 0, 1e-4, 1u << 20, true, 16);

  EditRequest req = simple_request(EditMode::c_rome);
  req.prefixes.prefixes = {TokenSeq{9, 8, 7}};  // N=1: the forward key IS k_bar
  EditResult res = edit(m, req, sm, ValueSearchConfig{});

  TokenSeq seq = {9, 8, 7, 65};
  ForwardTrace tr = forward(res.model, seq);
  const Vector& tapped = tr.tapped_values[tr.index(3)];
  CHECK(max_abs_diff(tapped, res.outcome.v_star) < 1e-6);
}

TEST_CASE("equal keys collapse both modes to the same update") {
  TinyLM m = TinyLM::random_init(edit_config(), 11);
  TokenSeq corpus;
  for (int i = 0; i < 64; ++i) corpus.push_back((i * 29) % 256);
  SecondMoment sm = estimate_second_moment(m, corpus, 0, 1e-4, 1u << 20, true, 16);

  EditRequest req = simple_request(EditMode::rome_inconsistent);
  req.prefixes.prefixes = {TokenSeq{}};  // empty prefix: k_u == k_bar
  EditResult a = edit(m, req, sm, ValueSearchConfig{});
  req.mode = EditMode::c_rome;
  EditResult b = edit(m, req, sm, ValueSearchConfig{});
  CHECK(max_abs_diff(a.outcome.w_hat, b.outcome.w_hat) == 0.0);
}

TEST_CASE("edit validates the second moment layer") {
  TinyLM m = TinyLM::random_init(edit_config(), 12);
  SecondMoment sm = identity_moment(m.config.mlp_dim());
  sm.layer = 1;  // model edits layer 0
  EditRequest req = simple_request(EditMode::c_rome);
  CHECK_THROWS_AS(edit(m, req, sm, ValueSearchConfig{}), ConfigInvalid);
}

TEST_CASE("edit request validation") {
  EditRequest r = simple_request(EditMode::c_rome);
  r.old_object = r.new_object;
  CHECK_THROWS_AS(r.validate(), ConfigInvalid);

  r = simple_request(EditMode::c_rome);
  r.subject_span_begin = 1;  // prompt[1] != subject
  CHECK_THROWS_AS(r.validate(), ConfigInvalid);
}
