#include "romelab/eval.hpp"

#include <cmath>

#include "romelab/errors.hpp"
#include "romelab/rng.hpp"

namespace romelab {

std::string to_string(PrefixMode m) {
  return m == PrefixMode::none ? "none" : "random_prefix";
}

PrefixMode prefix_mode_from_string(const std::string& s) {
  if (s == "none") return PrefixMode::none;
  if (s == "random_prefix") return PrefixMode::random_prefix;
  throw ConfigInvalid("unknown prefix mode: " + s);
}

namespace {

double nll_of(const Vector& logits, int target) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double se = 0.0;
  for (double z : logits) se += std::exp(z - mx);
  return std::log(se) + mx - logits[target];
}

int argmax_token(const Vector& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

double perplexity(const TinyLM& model, const TokenSeq& text) {
  if (text.size() < 2) {
    throw SequenceTooShort("perplexity: need at least two tokens");
  }
  const auto& cfg = model.config;
  const std::size_t off = cfg.bos_mode == BosMode::prepend ? 1 : 0;
  const std::size_t window = cfg.max_seq - off;

  double total = 0.0;
  std::size_t terms = 0;
  std::size_t start = 0;
  while (start + 1 < text.size()) {
    const std::size_t len = std::min(window, text.size() - start);
    TokenSeq chunk(text.begin() + start, text.begin() + start + len);
    ForwardTrace tr = forward(model, chunk);
    // predictions for chunk positions 1..len-1; position start is context only
    for (std::size_t t = 1; t < len; ++t) {
      total += nll_of(tr.logits[tr.index(t - 1)], chunk[t]);
      ++terms;
    }
    if (len < window) break;
    start += window - 1;  // overlap one token so the next window has context
  }
  return std::exp(total / static_cast<double>(terms));
}

bool efficacy(const TinyLM& model, const EditRequest& edit, const TokenSeq* prefix) {
  edit.validate();
  TokenSeq seq;
  if (prefix != nullptr) {
    seq.reserve(prefix->size() + edit.prompt_tokens.size());
    seq.insert(seq.end(), prefix->begin(), prefix->end());
  }
  seq.insert(seq.end(), edit.prompt_tokens.begin(), edit.prompt_tokens.end());
  ForwardTrace tr = forward(model, seq);
  const Vector& z = tr.logits[tr.index(seq.size() - 1)];
  // logit comparison == probability comparison; ties count as failure
  return z[edit.new_object] > z[edit.old_object];
}

EvalRow evaluate_case(const TinyLM& pre_model, const TinyLM& post_model,
                      const EvalCase& eval_case, PrefixMode prefix_mode,
                      const TokenSeq& ppl_text, std::uint64_t seed) {
  const auto& pre_cfg = pre_model.config;
  const auto& post_cfg = post_model.config;
  if (pre_cfg.n_layers != post_cfg.n_layers || pre_cfg.d_model != post_cfg.d_model ||
      pre_cfg.vocab_size != post_cfg.vocab_size ||
      pre_cfg.max_seq != post_cfg.max_seq || pre_cfg.bos_mode != post_cfg.bos_mode) {
    throw ConfigInvalid("evaluate_case: pre/post model configs differ");
  }
  const EditRequest& edit = eval_case.edit;

  EvalRow row;
  row.case_id = edit.id;
  row.group = eval_case.group();

  const TokenSeq* prefix = nullptr;
  TokenSeq chosen_prefix;
  if (prefix_mode == PrefixMode::random_prefix && edit.first_token_subject() &&
      !edit.prefixes.prefixes.empty()) {
    Rng rng(seed);
    chosen_prefix = edit.prefixes.prefixes[rng.next_below(edit.prefixes.prefixes.size())];
    prefix = &chosen_prefix;
  }
  row.efficacy_value = efficacy(post_model, edit, prefix);

  if (!eval_case.paraphrase_prompts.empty()) {
    std::size_t hits = 0;
    for (const auto& para : eval_case.paraphrase_prompts) {
      ForwardTrace tr = forward(post_model, para);
      const Vector& z = tr.logits[tr.index(para.size() - 1)];
      if (z[edit.new_object] > z[edit.old_object]) ++hits;
    }
    row.generalization = static_cast<double>(hits) /
                         static_cast<double>(eval_case.paraphrase_prompts.size());
  }

  if (!eval_case.locality_prompts.empty()) {
    std::size_t preserved = 0;
    for (const auto& probe : eval_case.locality_prompts) {
      ForwardTrace pre_tr = forward(pre_model, probe.prompt);
      ForwardTrace post_tr = forward(post_model, probe.prompt);
      const int pre_tok = argmax_token(pre_tr.logits[pre_tr.index(probe.prompt.size() - 1)]);
      const int post_tok =
          argmax_token(post_tr.logits[post_tr.index(probe.prompt.size() - 1)]);
      if (pre_tok == post_tok) ++preserved;
    }
    row.locality = static_cast<double>(preserved) /
                   static_cast<double>(eval_case.locality_prompts.size());
  }

  row.ppl_before = perplexity(pre_model, ppl_text);
  row.ppl_after = perplexity(post_model, ppl_text);
  return row;
}

EvalReport aggregate_eval(const std::vector<EvalRow>& rows) {
  EvalReport report;
  report.rows = rows;
  // optional metrics are averaged over the rows that actually carry them
  std::vector<std::size_t> gen_counts, loc_counts;
  for (const auto& row : rows) {
    EvalAggregate* agg = nullptr;
    std::size_t gi = 0;
    for (; gi < report.groups.size(); ++gi) {
      if (report.groups[gi].group == row.group) {
        agg = &report.groups[gi];
        break;
      }
    }
    if (agg == nullptr) {
      report.groups.push_back({});
      report.groups.back().group = row.group;
      agg = &report.groups.back();
      gen_counts.push_back(0);
      loc_counts.push_back(0);
    }
    agg->count += 1;
    agg->efficacy_rate += row.efficacy_value ? 1.0 : 0.0;
    agg->mean_ppl_ratio += row.ppl_after / row.ppl_before;
    if (row.generalization) {
      agg->mean_generalization =
          agg->mean_generalization.value_or(0.0) + *row.generalization;
      gen_counts[gi] += 1;
    }
    if (row.locality) {
      agg->mean_locality = agg->mean_locality.value_or(0.0) + *row.locality;
      loc_counts[gi] += 1;
    }
  }
  for (std::size_t gi = 0; gi < report.groups.size(); ++gi) {
    auto& g = report.groups[gi];
    const double inv = 1.0 / static_cast<double>(g.count);
    g.efficacy_rate *= inv;
    g.mean_ppl_ratio *= inv;
    if (g.mean_generalization) *g.mean_generalization /= gen_counts[gi];
    if (g.mean_locality) *g.mean_locality /= loc_counts[gi];
  }
  return report;
}

CollapseBenchmark collapse_benchmark(const TinyLM& model,
                                     const std::vector<EvalCase>& cases,
                                     EditMode mode, const SecondMoment& c,
                                     const ValueSearchConfig& cfg,
                                     const TokenSeq& ppl_text) {
  CollapseBenchmark bench;
  bench.baseline_ppl = perplexity(model, ppl_text);

  for (const auto& eval_case : cases) {
    CollapseCaseResult res;
    res.case_id = eval_case.edit.id;
    res.group = eval_case.group();
    try {
      EditRequest request = eval_case.edit;
      request.mode = mode;
      EditResult edited = edit(model, request, c, cfg, /*denom_floor=*/0.0);
      res.denominator = edited.outcome.denominator;
      res.ppl_after = perplexity(edited.model, ppl_text);
    } catch (const Error& e) {
      res.failed = true;
      res.error = e.what();
    }
    bench.cases.push_back(std::move(res));
  }

  for (const auto& res : bench.cases) {
    if (res.failed) continue;
    CollapseGroupStats* g = nullptr;
    for (auto& s : bench.groups) {
      if (s.group == res.group) {
        g = &s;
        break;
      }
    }
    if (g == nullptr) {
      bench.groups.push_back({});
      bench.groups.back().group = res.group;
      g = &bench.groups.back();
    }
    g->count += 1;
    g->max_ppl = std::max(g->max_ppl, res.ppl_after);
    g->mean_ppl += res.ppl_after;
    g->mean_abs_denominator += std::fabs(res.denominator);
  }
  for (auto& g : bench.groups) {
    const double inv = 1.0 / static_cast<double>(g.count);
    g.mean_ppl *= inv;
    g.mean_abs_denominator *= inv;
  }
  return bench;
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::baseline: return "baseline";
    case AblationVariant::bos_removed: return "bos_removed";
    case AblationVariant::second_to_first: return "second_to_first";
    default: return "first_to_second";
  }
}

AblationReport ablation_suite(const TinyLM& model,
                              const std::vector<EvalCase>& cases, EditMode mode,
                              const SecondMoment& c, const ValueSearchConfig& cfg,
                              const TokenSeq& ppl_text) {
  AblationReport report;
  report.entries.push_back(
      {AblationVariant::baseline,
       collapse_benchmark(model, cases, mode, c, cfg, ppl_text)});
  if (model.config.bos_mode == BosMode::prepend) {
    TinyLM stripped = with_bos_mode(model, BosMode::none);
    report.entries.push_back(
        {AblationVariant::bos_removed,
         collapse_benchmark(stripped, cases, mode, c, cfg, ppl_text)});
  }
  TinyLM s2f = apply_pos_swap(model, PosSwap::second_to_first);
  report.entries.push_back(
      {AblationVariant::second_to_first,
       collapse_benchmark(s2f, cases, mode, c, cfg, ppl_text)});
  TinyLM f2s = apply_pos_swap(model, PosSwap::first_to_second);
  report.entries.push_back(
      {AblationVariant::first_to_second,
       collapse_benchmark(f2s, cases, mode, c, cfg, ppl_text)});
  return report;
}

}  // namespace romelab
