#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "romelab/keyspace.hpp"
#include "romelab/linalg.hpp"
#include "romelab/model.hpp"

namespace romelab {

// rome_inconsistent reproduces the audited implementation: the solve uses the
// prefixed key but the right-hand key of both numerator and denominator is
// the unprefixed one. c_rome uses the prefixed key everywhere.
enum class EditMode { rome_inconsistent, c_rome };

std::string to_string(EditMode m);
EditMode edit_mode_from_string(const std::string& s);

// Relative denominator floor below which the update is refused. Pass 0 to
// disable the floor and study collapse on purpose (an exactly zero
// denominator is always refused).
inline constexpr double kDefaultDenomFloor = 1e-4;

struct EditRequest {
  std::string id;
  TokenSeq subject_tokens;
  TokenSeq prompt_tokens;
  std::size_t subject_span_begin = 0;  // subject occupies [begin, begin + len)
  std::size_t subject_span_len = 0;
  int old_object = 0;
  int new_object = 0;
  PrefixSet prefixes;
  EditMode mode = EditMode::c_rome;

  std::size_t subject_last_pos() const {
    return subject_span_begin + subject_span_len - 1;
  }
  // next-token prediction slot: the last prompt position
  std::size_t target_pos() const { return prompt_tokens.size() - 1; }
  bool first_token_subject() const {
    return subject_span_begin == 0 && subject_span_len == 1;
  }
  void validate() const;  // throws ConfigInvalid
};

struct ValueSearchConfig {
  std::size_t steps = 80;
  double learning_rate = 0.5;
  double weight_decay = 0.05;  // L2 pull toward the original value v0
  double grad_clip = 1.0;      // L2 clip on the step gradient; 0 disables
  std::uint64_t seed = 0;
};

struct ValueSearchResult {
  Vector v_star;
  Vector v0;
  std::vector<double> loss_curve;  // loss evaluated before each step
};

// Gradient descent on NLL(new object at the target position | inject v at the
// subject-last position) + weight_decay * ||v - v0||^2, starting from v0.
ValueSearchResult optimize_value(const TinyLM& model, const EditRequest& request,
                                 const ValueSearchConfig& cfg);

struct RankOneOutcome {
  Matrix w_hat;
  Matrix delta;
  Matrix numerator;
  double denominator = 0.0;
};

// q = C^{-1} k_bar via the SPD solve; numerator = (v_star - W k_right) q^T;
// denominator = q . k_right; W_hat = W + numerator / denominator.
// Throws DenominatorBelowFloor when |denominator| < denom_floor*|q|*|k_right|.
RankOneOutcome rank_one_update(const Matrix& w, const SecondMoment& c,
                               const Vector& k_bar, const Vector& k_right,
                               const Vector& v_star, double denom_floor);

struct EditOutcome {
  Matrix w_hat;
  Matrix delta;
  Matrix numerator;
  double denominator = 0.0;
  Vector v_star;
  KeyBundle key_bundle;
  EditMode mode = EditMode::c_rome;
  std::vector<double> value_loss_curve;
};

struct EditResult {
  TinyLM model;  // copy with the edited-layer down-projection replaced
  EditOutcome outcome;
};

// Full pipeline: key bundle, value search, rank-one update, install. The
// input model is never mutated.
EditResult edit(const TinyLM& model, const EditRequest& request,
                const SecondMoment& c, const ValueSearchConfig& cfg,
                double denom_floor = kDefaultDenomFloor);

// Restores the edited-layer down-projection. No-op when it already matches.
TinyLM revert(const TinyLM& model, const Matrix& original_w);

// JSON report: mode, denominator, numerator/delta Frobenius norms, value-loss
// curve, key norms and cosines.
nlohmann::ordered_json outcome_to_json(const EditOutcome& outcome);

}  // namespace romelab
