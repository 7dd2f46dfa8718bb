#pragma once

#include <optional>
#include <string>
#include <vector>

#include "romelab/editor.hpp"
#include "romelab/keyspace.hpp"
#include "romelab/model.hpp"

namespace romelab {

struct LocalityProbe {
  TokenSeq prompt;
  int expected = 0;  // recorded for reporting; the metric compares argmaxes
};

struct EvalCase {
  EditRequest edit;
  std::vector<TokenSeq> paraphrase_prompts;
  std::vector<LocalityProbe> locality_prompts;

  // collapse-pattern grouping: sequence-initial single-token subjects
  std::string group() const {
    return edit.first_token_subject() ? "first_token" : "mid_sequence";
  }
};

// exp of the mean next-token NLL over positions 1..end. Texts longer than the
// context window are scored in windows overlapping by one token, so every
// position from 1 on is predicted exactly once.
double perplexity(const TinyLM& model, const TokenSeq& text);

// True iff the model puts strictly more probability on the new object than on
// the old one at the prompt's next-token slot. `prefix` is prepended when
// given.
bool efficacy(const TinyLM& model, const EditRequest& edit,
              const TokenSeq* prefix = nullptr);

enum class PrefixMode { none, random_prefix };

std::string to_string(PrefixMode m);
PrefixMode prefix_mode_from_string(const std::string& s);

struct EvalRow {
  std::string case_id;
  std::string group;
  bool efficacy_value = false;
  std::optional<double> generalization;  // absent when no paraphrases supplied
  std::optional<double> locality;        // absent when no probes supplied
  double ppl_before = 0.0;
  double ppl_after = 0.0;
};

// Measures one edited model against its base. With prefix_mode=random_prefix,
// the efficacy prompt is prefixed by one of the case's own editing prefixes
// (chosen by `seed`) iff the subject is the sequence-initial token.
EvalRow evaluate_case(const TinyLM& pre_model, const TinyLM& post_model,
                      const EvalCase& eval_case, PrefixMode prefix_mode,
                      const TokenSeq& ppl_text, std::uint64_t seed);

struct EvalAggregate {
  std::string group;
  std::size_t count = 0;
  double efficacy_rate = 0.0;
  std::optional<double> mean_generalization;
  std::optional<double> mean_locality;
  double mean_ppl_ratio = 0.0;  // ppl_after / ppl_before
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalAggregate> groups;
};

EvalReport aggregate_eval(const std::vector<EvalRow>& rows);

struct CollapseCaseResult {
  std::string case_id;
  std::string group;
  bool failed = false;
  std::string error;
  double denominator = 0.0;
  double ppl_after = 0.0;
};

struct CollapseGroupStats {
  std::string group;
  std::size_t count = 0;
  double max_ppl = 0.0;
  double mean_ppl = 0.0;
  double mean_abs_denominator = 0.0;
};

struct CollapseBenchmark {
  double baseline_ppl = 0.0;
  std::vector<CollapseCaseResult> cases;
  std::vector<CollapseGroupStats> groups;  // empty groups are omitted
};

// Edits every case with the denominator floor disabled, measures post-edit
// perplexity on ppl_text, and tabulates per-group max/mean next to the
// unedited model's perplexity. Case failures are recorded, not fatal.
CollapseBenchmark collapse_benchmark(const TinyLM& model,
                                     const std::vector<EvalCase>& cases,
                                     EditMode mode, const SecondMoment& c,
                                     const ValueSearchConfig& cfg,
                                     const TokenSeq& ppl_text);

enum class AblationVariant { baseline, bos_removed, second_to_first, first_to_second };

std::string to_string(AblationVariant v);

struct AblationEntry {
  AblationVariant variant;
  CollapseBenchmark benchmark;
};

struct AblationReport {
  std::vector<AblationEntry> entries;
};

// Runs collapse_benchmark under {baseline, bos removed, second_to_first,
// first_to_second}. The BOS-removal variant requires a model with
// bos_mode=prepend and is omitted otherwise.
AblationReport ablation_suite(const TinyLM& model,
                              const std::vector<EvalCase>& cases, EditMode mode,
                              const SecondMoment& c, const ValueSearchConfig& cfg,
                              const TokenSeq& ppl_text);

}  // namespace romelab
