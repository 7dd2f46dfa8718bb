#include "romelab/editor.hpp"

#include <cmath>

#include "model_internal.hpp"
#include "romelab/errors.hpp"

namespace romelab {

std::string to_string(EditMode m) {
  return m == EditMode::rome_inconsistent ? "rome" : "c-rome";
}

EditMode edit_mode_from_string(const std::string& s) {
  if (s == "rome" || s == "rome_inconsistent") return EditMode::rome_inconsistent;
  if (s == "c-rome" || s == "c_rome") return EditMode::c_rome;
  throw ConfigInvalid("unknown edit mode: " + s);
}

void EditRequest::validate() const {
  if (subject_tokens.empty()) throw ConfigInvalid("edit request: empty subject");
  if (prompt_tokens.empty()) throw ConfigInvalid("edit request: empty prompt");
  if (subject_span_len != subject_tokens.size() ||
      subject_span_begin + subject_span_len > prompt_tokens.size()) {
    throw ConfigInvalid("edit request: subject span does not fit prompt");
  }
  for (std::size_t i = 0; i < subject_span_len; ++i) {
    if (prompt_tokens[subject_span_begin + i] != subject_tokens[i]) {
      throw ConfigInvalid("edit request: prompt does not contain the subject at its span");
    }
  }
  if (old_object == new_object) {
    throw ConfigInvalid("edit request: old and new objects must differ");
  }
}

ValueSearchResult optimize_value(const TinyLM& model, const EditRequest& request,
                                 const ValueSearchConfig& cfg) {
  request.validate();
  const auto& mc = model.config;
  if (!(cfg.learning_rate > 0.0)) {
    throw ConfigInvalid("optimize_value: learning rate must be positive");
  }
  const std::size_t d = mc.d_model;
  const std::size_t off = mc.bos_mode == BosMode::prepend ? 1 : 0;
  const std::size_t inject_pos = request.subject_last_pos();
  const std::size_t target_pos = request.target_pos();

  const TokenSeq proc = detail::preprocess(model, request.prompt_tokens);

  // v0: the model's own value at the subject-last position
  detail::Acts acts;
  detail::run_forward(model, proc, acts);
  const auto& edited = acts.layers[mc.edited_layer];
  Vector v0(&edited.mlp_out[(inject_pos + off) * d],
            &edited.mlp_out[(inject_pos + off) * d] + d);

  ValueSearchResult res;
  res.v0 = v0;
  res.v_star = v0;
  if (cfg.steps == 0) return res;

  Vector v = v0;
  detail::Buf dlogits(proc.size() * mc.vocab_size, 0.0);
  Vector grad(d, 0.0);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    detail::Injection inj{inject_pos + off, &v};
    detail::run_forward(model, proc, acts, &inj);
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    double loss = detail::nll_at(acts, mc.vocab_size, target_pos + off,
                                 request.new_object, dlogits, 1.0);
    Vector d_inj(d, 0.0);
    detail::run_backward(model, proc, acts, dlogits, nullptr, &inj, &d_inj);

    double reg = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = v[i] - v0[i];
      reg += diff * diff;
      grad[i] = d_inj[i] + 2.0 * cfg.weight_decay * diff;
    }
    loss += cfg.weight_decay * reg;
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("optimize_value: loss diverged at step " +
                          std::to_string(step));
    }
    res.loss_curve.push_back(loss);

    if (cfg.grad_clip > 0.0) {
      const double gnorm = norm2(grad);
      if (gnorm > cfg.grad_clip) {
        const double s = cfg.grad_clip / gnorm;
        for (double& g : grad) g *= s;
      }
    }
    for (std::size_t i = 0; i < d; ++i) v[i] -= cfg.learning_rate * grad[i];
  }

  ensure_finite(v, "optimize_value: v_star");
  res.v_star = std::move(v);
  return res;
}

RankOneOutcome rank_one_update(const Matrix& w, const SecondMoment& c,
                               const Vector& k_bar, const Vector& k_right,
                               const Vector& v_star, double denom_floor) {
  const std::size_t d_out = w.rows(), d_in = w.cols();
  if (k_bar.size() != d_in || k_right.size() != d_in) {
    throw DimensionMismatch("rank_one_update: key dim does not match W columns");
  }
  if (v_star.size() != d_out) {
    throw DimensionMismatch("rank_one_update: v_star dim does not match W rows");
  }
  if (c.c.rows() != d_in || c.c.cols() != d_in) {
    throw DimensionMismatch("rank_one_update: C dim does not match key dim");
  }

  const Vector q = solve_spd(c.c, k_bar);
  const double denominator = dot(q, k_right);
  const double floor_abs = denom_floor * norm2(q) * norm2(k_right);
  if (std::fabs(denominator) < floor_abs || denominator == 0.0) {
    throw DenominatorBelowFloor(
        "rank_one_update: denominator " + std::to_string(denominator) +
            " below floor " + std::to_string(floor_abs) + "; the edit would blow up",
        denominator);
  }

  RankOneOutcome out;
  out.denominator = denominator;
  out.numerator = outer(sub(v_star, matvec(w, k_right)), q);
  out.delta = scale(out.numerator, 1.0 / denominator);
  out.w_hat = add(w, out.delta);
  ensure_finite(out.w_hat, "rank_one_update: W_hat");
  return out;
}

EditResult edit(const TinyLM& model, const EditRequest& request,
                const SecondMoment& c, const ValueSearchConfig& cfg,
                double denom_floor) {
  request.validate();
  const auto& mc = model.config;
  if (c.layer != mc.edited_layer) {
    throw ConfigInvalid("edit: second moment estimated at layer " +
                        std::to_string(c.layer) + " but model edits layer " +
                        std::to_string(mc.edited_layer));
  }

  KeyBundle bundle = prefixed_key(model, request.subject_tokens, request.prefixes);
  ValueSearchResult vres = optimize_value(model, request, cfg);
  const Vector& k_right =
      request.mode == EditMode::c_rome ? bundle.k_bar : bundle.k_u;

  const Matrix& w = model.layers[mc.edited_layer].w_down;
  RankOneOutcome frag = rank_one_update(w, c, bundle.k_bar, k_right,
                                        vres.v_star, denom_floor);

  EditResult result;
  result.model = model;
  result.model.layers[mc.edited_layer].w_down = frag.w_hat;

  result.outcome.w_hat = std::move(frag.w_hat);
  result.outcome.delta = std::move(frag.delta);
  result.outcome.numerator = std::move(frag.numerator);
  result.outcome.denominator = frag.denominator;
  result.outcome.v_star = std::move(vres.v_star);
  result.outcome.key_bundle = std::move(bundle);
  result.outcome.mode = request.mode;
  result.outcome.value_loss_curve = std::move(vres.loss_curve);
  return result;
}

TinyLM revert(const TinyLM& model, const Matrix& original_w) {
  const auto& mc = model.config;
  const Matrix& current = model.layers[mc.edited_layer].w_down;
  if (!original_w.same_shape(current)) {
    throw DimensionMismatch("revert: W shape does not match the edited layer");
  }
  TinyLM out = model;
  out.layers[mc.edited_layer].w_down = original_w;
  return out;
}

nlohmann::ordered_json outcome_to_json(const EditOutcome& o) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(o.mode);
  j["denominator"] = o.denominator;
  j["numerator_frobenius"] = frobenius_norm(o.numerator);
  j["delta_frobenius"] = frobenius_norm(o.delta);
  j["value_loss_curve"] = o.value_loss_curve;

  const Vector& kb = o.key_bundle.k_bar;
  const Vector& ku = o.key_bundle.k_u;
  j["k_bar_norm"] = norm2(kb);
  j["k_u_norm"] = norm2(ku);
  const double denom_norms = norm2(kb) * norm2(ku);
  j["k_bar_k_u_cosine"] = denom_norms > 0.0 ? dot(kb, ku) / denom_norms : 0.0;
  j["n_prefixes"] = o.key_bundle.per_prefix_keys.size();
  return j;
}

}  // namespace romelab
