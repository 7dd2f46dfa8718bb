// romelab: train a tiny byte-level transformer, apply rank-one edits to its
// MLP value map in consistent or inconsistent key mode, and measure what a
// single edit does to the model.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "romelab/container.hpp"
#include "romelab/corpus.hpp"
#include "romelab/diagnostics.hpp"
#include "romelab/editor.hpp"
#include "romelab/errors.hpp"
#include "romelab/eval.hpp"
#include "romelab/keyspace.hpp"
#include "romelab/model.hpp"
#include "romelab/suite.hpp"
#include "romelab/svg.hpp"
#include "romelab/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace romelab;

namespace {

struct RunConfig {
  ModelConfig model;
  std::string weights = "out/model.rlw";
  std::string corpus;
  std::size_t holdout_bytes = 4096;

  std::string cov_path = "out/cov.rlw";
  double cov_ridge = 1e-4;
  bool cov_ridge_relative = true;
  std::size_t cov_max_samples = 8192;
  std::size_t cov_window = 64;

  std::size_t train_steps = 1200;
  TrainHyper hyper;

  ValueSearchConfig value_search;

  std::size_t prefix_n = 10;
  std::size_t prefix_min = 2;
  std::size_t prefix_max = 10;
  PrefixSource prefix_source = PrefixSource::model_generated;

  EditMode mode = EditMode::c_rome;
  double denom_floor = kDefaultDenomFloor;

  std::string suite;
  PrefixMode eval_prefix_mode = PrefixMode::random_prefix;

  std::uint64_t seed = 42;
  std::string out_dir = "out";
  bool emit_json = true;
  bool emit_csv = true;

  json resolved;  // the fully resolved view embedded into every report
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t case_seed(const RunConfig& rc, const std::string& case_id) {
  return rc.seed ^ fnv1a(case_id);
}

json model_config_json(const ModelConfig& c) {
  json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_mlp"] = c.mlp_dim();
  j["vocab_size"] = c.vocab_size;
  j["max_seq"] = c.max_seq;
  j["edited_layer"] = c.edited_layer;
  j["bos_mode"] = to_string(c.bos_mode);
  j["pos_swap"] = to_string(c.pos_swap);
  j["ln_epsilon"] = c.ln_epsilon;
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigInvalid(std::string("config parse error: ") + e.what());
  }

  RunConfig rc;
  const json m = j.value("model", json::object());
  rc.model.n_layers = m.value("n_layers", std::size_t{4});
  rc.model.d_model = m.value("d_model", std::size_t{64});
  rc.model.n_heads = m.value("n_heads", std::size_t{4});
  rc.model.d_mlp = m.value("d_mlp", std::size_t{0});
  rc.model.vocab_size = m.value("vocab_size", std::size_t{257});
  rc.model.max_seq = m.value("max_seq", std::size_t{80});
  rc.model.edited_layer = m.value("edited_layer", std::size_t{2});
  rc.model.bos_mode = bos_mode_from_string(m.value("bos_mode", std::string("none")));
  rc.model.pos_swap = pos_swap_from_string(m.value("pos_swap", std::string("off")));
  rc.model.ln_epsilon = m.value("ln_epsilon", 1e-5);
  rc.model.validate();

  rc.weights = j.value("weights", rc.weights);
  if (!j.contains("corpus")) throw ConfigInvalid("config: 'corpus' path is required");
  rc.corpus = j.at("corpus").get<std::string>();
  rc.holdout_bytes = j.value("holdout_bytes", rc.holdout_bytes);

  const json cov = j.value("covariance", json::object());
  rc.cov_path = cov.value("path", rc.cov_path);
  rc.cov_ridge = cov.value("ridge", rc.cov_ridge);
  rc.cov_ridge_relative = cov.value("ridge_relative", rc.cov_ridge_relative);
  rc.cov_max_samples = cov.value("max_samples", rc.cov_max_samples);
  rc.cov_window = cov.value("window", rc.cov_window);

  const json tr = j.value("train", json::object());
  rc.train_steps = tr.value("steps", rc.train_steps);
  rc.hyper.learning_rate = tr.value("learning_rate", rc.hyper.learning_rate);
  rc.hyper.batch_size = tr.value("batch_size", rc.hyper.batch_size);
  rc.hyper.seq_len = tr.value("seq_len", rc.hyper.seq_len);
  rc.hyper.seed = tr.value("seed", std::uint64_t{1});
  rc.hyper.grad_clip = tr.value("grad_clip", rc.hyper.grad_clip);

  const json vs = j.value("value_search", json::object());
  rc.value_search.steps = vs.value("steps", rc.value_search.steps);
  rc.value_search.learning_rate = vs.value("learning_rate", rc.value_search.learning_rate);
  rc.value_search.weight_decay = vs.value("weight_decay", rc.value_search.weight_decay);
  rc.value_search.grad_clip = vs.value("grad_clip", rc.value_search.grad_clip);
  rc.value_search.seed = vs.value("seed", std::uint64_t{0});

  const json pf = j.value("prefixes", json::object());
  rc.prefix_n = pf.value("n", rc.prefix_n);
  rc.prefix_min = pf.value("min_len", rc.prefix_min);
  rc.prefix_max = pf.value("max_len", rc.prefix_max);
  rc.prefix_source =
      prefix_source_from_string(pf.value("source", std::string("model_generated")));

  const json ed = j.value("edit", json::object());
  rc.mode = edit_mode_from_string(ed.value("mode", std::string("c-rome")));
  rc.denom_floor = ed.value("denom_floor", rc.denom_floor);

  rc.suite = j.value("suite", rc.suite);
  const json ev = j.value("eval", json::object());
  rc.eval_prefix_mode =
      prefix_mode_from_string(ev.value("prefix_mode", std::string("random_prefix")));

  rc.seed = j.value("seed", rc.seed);
  rc.out_dir = j.value("out_dir", rc.out_dir);
  const std::string fmt = j.value("format", std::string("both"));
  rc.emit_json = fmt == "json" || fmt == "both";
  rc.emit_csv = fmt == "csv" || fmt == "both";
  if (!rc.emit_json && !rc.emit_csv) {
    throw ConfigInvalid("config: format must be json, csv or both");
  }
  return rc;
}

json resolve_config_json(const RunConfig& rc) {
  json j;
  j["model"] = model_config_json(rc.model);
  j["weights"] = rc.weights;
  j["corpus"] = rc.corpus;
  j["holdout_bytes"] = rc.holdout_bytes;
  j["covariance"] = {{"path", rc.cov_path},
                     {"ridge", rc.cov_ridge},
                     {"ridge_relative", rc.cov_ridge_relative},
                     {"max_samples", rc.cov_max_samples},
                     {"window", rc.cov_window}};
  j["train"] = {{"steps", rc.train_steps},
                {"learning_rate", rc.hyper.learning_rate},
                {"batch_size", rc.hyper.batch_size},
                {"seq_len", rc.hyper.seq_len},
                {"seed", rc.hyper.seed},
                {"grad_clip", rc.hyper.grad_clip}};
  j["value_search"] = {{"steps", rc.value_search.steps},
                       {"learning_rate", rc.value_search.learning_rate},
                       {"weight_decay", rc.value_search.weight_decay},
                       {"grad_clip", rc.value_search.grad_clip},
                       {"seed", rc.value_search.seed}};
  j["prefixes"] = {{"n", rc.prefix_n},
                   {"min_len", rc.prefix_min},
                   {"max_len", rc.prefix_max},
                   {"source", to_string(rc.prefix_source)}};
  j["edit"] = {{"mode", to_string(rc.mode)}, {"denom_floor", rc.denom_floor}};
  j["suite"] = rc.suite;
  j["eval"] = {{"prefix_mode", to_string(rc.eval_prefix_mode)}};
  j["seed"] = rc.seed;
  j["out_dir"] = rc.out_dir;
  j["format"] = rc.emit_json && rc.emit_csv ? "both" : (rc.emit_json ? "json" : "csv");
  return j;
}

void write_report(const RunConfig& rc, const std::string& name, json results,
                  json provenance) {
  if (!rc.emit_json) return;
  json report;
  report["run_config"] = rc.resolved;
  report["provenance"] = std::move(provenance);
  report["results"] = std::move(results);
  write_file_atomic(fs::path(rc.out_dir) / name, report.dump(2) + "\n");
}

void write_csv(const RunConfig& rc, const std::string& name, const std::string& body) {
  if (!rc.emit_csv) return;
  write_file_atomic(fs::path(rc.out_dir) / name, body);
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// training slice: everything after the held-out perplexity probe
TokenSeq training_slice(const RunConfig& rc, const TokenSeq& corpus) {
  if (corpus.size() <= rc.holdout_bytes + 1) {
    throw CorpusTooSmall("corpus does not extend past the held-out probe");
  }
  return TokenSeq(corpus.begin() + rc.holdout_bytes, corpus.end());
}

TokenSeq holdout_slice(const RunConfig& rc, const TokenSeq& corpus) {
  const std::size_t n = std::min(rc.holdout_bytes, corpus.size());
  if (n < 2) throw CorpusTooSmall("held-out probe needs at least two bytes");
  return TokenSeq(corpus.begin(), corpus.begin() + n);
}

PrefixSet prefixes_for_case(const RunConfig& rc, const TinyLM& model,
                            const std::string& case_id) {
  return sample_prefixes(model, rc.prefix_n, rc.prefix_min, rc.prefix_max,
                         case_seed(rc, case_id), rc.prefix_source);
}

std::vector<EvalCase> load_cases(const RunConfig& rc) {
  if (rc.suite.empty()) throw ConfigInvalid("config: 'suite' path is required");
  return load_suite(rc.suite);
}

const EvalCase* find_case(const std::vector<EvalCase>& cases, const std::string& id) {
  for (const auto& c : cases) {
    if (c.edit.id == id) return &c;
  }
  return nullptr;
}

// ---- commands -------------------------------------------------------------

int cmd_train(RunConfig rc) {
  const TokenSeq corpus = load_corpus(rc.corpus);
  const TokenSeq slice = training_slice(rc, corpus);

  TinyLM model = TinyLM::random_init(rc.model, rc.seed);
  TrainResult result = train(model, slice, rc.train_steps, rc.hyper);
  save_model(rc.weights, result.model);

  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    csv += std::to_string(i) + "," + csv_num(result.loss_curve[i]) + "\n";
  }
  write_csv(rc, "train_loss.csv", csv);

  json results;
  results["steps"] = result.loss_curve.size();
  results["final_loss"] = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  results["trained_tokens"] =
      rc.train_steps * rc.hyper.batch_size * rc.hyper.seq_len;
  const TokenSeq probe = holdout_slice(rc, corpus);
  results["holdout_perplexity"] = perplexity(result.model, probe);
  write_report(rc, "train_report.json",
               std::move(results),
               {{"corpus", file_hash(rc.corpus)}, {"weights", file_hash(rc.weights)}});
  return 0;
}

int cmd_estimate_cov(RunConfig rc) {
  TinyLM model = load_model(rc.weights);
  const TokenSeq corpus = load_corpus(rc.corpus);
  const TokenSeq slice = training_slice(rc, corpus);
  SecondMoment sm =
      estimate_second_moment(model, slice, model.config.edited_layer, rc.cov_ridge,
                             rc.cov_max_samples, rc.cov_ridge_relative, rc.cov_window);
  save_second_moment(rc.cov_path, sm);

  json results;
  results["layer"] = sm.layer;
  results["sample_count"] = sm.sample_count;
  results["ridge"] = sm.ridge;
  double trace = 0.0;
  for (std::size_t i = 0; i < sm.c.rows(); ++i) trace += sm.c(i, i);
  results["trace"] = trace;
  write_report(rc, "cov_report.json", std::move(results),
               {{"corpus", file_hash(rc.corpus)},
                {"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)}});
  return 0;
}

int cmd_edit(RunConfig rc, const std::string& case_id) {
  if (case_id.empty()) throw ConfigInvalid("edit: --case <id> is required");
  TinyLM model = load_model(rc.weights);
  SecondMoment sm = load_second_moment(rc.cov_path);
  auto cases = load_cases(rc);
  const EvalCase* c = find_case(cases, case_id);
  if (c == nullptr) throw ConfigInvalid("edit: no case with id " + case_id);

  EditRequest request = c->edit;
  request.mode = rc.mode;
  request.prefixes = prefixes_for_case(rc, model, case_id);
  EditResult result = edit(model, request, sm, rc.value_search, rc.denom_floor);

  const std::string weights_name = "edited_" + case_id + ".rlw";
  save_model(fs::path(rc.out_dir) / weights_name, result.model);

  json results = outcome_to_json(result.outcome);
  results["case_id"] = case_id;
  results["group"] = c->group();
  results["edited_weights"] = weights_name;
  write_report(rc, "edit_" + case_id + ".json", std::move(results),
               {{"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)},
                {"suite", file_hash(rc.suite)}});
  return 0;
}

int cmd_diagnose(RunConfig rc) {
  TinyLM model = load_model(rc.weights);
  SecondMoment sm = load_second_moment(rc.cov_path);
  auto cases = load_cases(rc);

  std::vector<EditOutcome> outcomes;
  std::vector<LabeledOutcome> labeled;
  std::vector<KeyBundle> bundles;
  std::vector<std::string> groups;
  json failures = json::array();
  outcomes.reserve(cases.size());

  for (const auto& c : cases) {
    EditRequest request = c.edit;
    request.mode = rc.mode;
    request.prefixes = prefixes_for_case(rc, model, c.edit.id);
    try {
      EditResult r = edit(model, request, sm, rc.value_search, /*denom_floor=*/0.0);
      bundles.push_back(r.outcome.key_bundle);
      groups.push_back(c.group());
      outcomes.push_back(std::move(r.outcome));
      labeled.push_back({c.edit.id, &outcomes.back(), c.group()});
    } catch (const Error& e) {
      failures.push_back({{"case_id", c.edit.id}, {"error", e.what()}});
    }
  }
  if (outcomes.empty()) throw ConfigInvalid("diagnose: every edit failed");

  // labeled holds pointers into `outcomes`; reserve() above keeps them stable
  DenominatorReport denoms = denominator_stats(labeled);
  KeyDivergence divergence = key_divergence(bundles, sm);
  std::vector<TokenSeq> prompts;
  for (const auto& c : cases) prompts.push_back(c.edit.prompt_tokens);
  ConcentrationProfile profile = layer_profile(model, prompts);

  double baseline = 0.0;
  for (const auto& g : denoms.groups) {
    if (g.group == "mid_sequence") baseline = g.mean_abs_denominator;
  }

  json jd;
  jd["rows"] = json::array();
  for (const auto& row : denoms.rows) {
    jd["rows"].push_back({{"case_id", row.case_id},
                          {"group", row.group},
                          {"mode", to_string(row.mode)},
                          {"abs_denominator", row.abs_denominator},
                          {"numerator_norm", row.numerator_norm},
                          {"delta_norm", row.delta_norm}});
  }
  jd["groups"] = json::array();
  for (const auto& g : denoms.groups) {
    jd["groups"].push_back({{"group", g.group},
                            {"count", g.count},
                            {"mean_abs_denominator", g.mean_abs_denominator},
                            {"mean_numerator_norm", g.mean_numerator_norm},
                            {"mean_delta_norm", g.mean_delta_norm}});
  }
  if (baseline > 0.0) {
    json risks = json::array();
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      CollapseRiskResult r = collapse_risk(outcomes[i], baseline);
      risks.push_back({{"case_id", labeled[i].case_id},
                       {"ratio", r.ratio},
                       {"risk", r.risk == CollapseRisk::high ? "high" : "low"}});
    }
    jd["collapse_risk"] = std::move(risks);
    jd["risk_baseline"] = baseline;
  }
  jd["failures"] = failures;
  write_report(rc, "diagnose_denominators.json", std::move(jd),
               {{"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)},
                {"suite", file_hash(rc.suite)}});

  std::string csv = "case_id,group,mode,abs_denominator,numerator_norm,delta_norm\n";
  for (const auto& row : denoms.rows) {
    csv += row.case_id + "," + row.group + "," + to_string(row.mode) + "," +
           csv_num(row.abs_denominator) + "," + csv_num(row.numerator_norm) + "," +
           csv_num(row.delta_norm) + "\n";
  }
  write_csv(rc, "diagnose_denominators.csv", csv);

  json jdiv;
  jdiv["centroid_distance_keys"] = divergence.centroid_distance_keys;
  jdiv["centroid_distance_solved"] = divergence.centroid_distance_solved;
  jdiv["cosine_keys"] = divergence.cosine_keys;
  jdiv["cosine_solved"] = divergence.cosine_solved;
  write_report(rc, "diagnose_divergence.json", std::move(jdiv),
               {{"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)},
                {"suite", file_hash(rc.suite)}});

  // scatter of key populations, split by case group
  auto split_series = [&](const std::vector<Vector>& pts, const std::string& label,
                          const std::string& c_first, const std::string& c_mid) {
    ScatterSeries first{label + " (first_token)", c_first, {}};
    ScatterSeries mid{label + " (mid_sequence)", c_mid, {}};
    for (std::size_t i = 0; i < pts.size(); ++i) {
      (groups[i] == "first_token" ? first : mid)
          .points.push_back({pts[i][0], pts[i][1]});
    }
    return std::make_pair(first, mid);
  };
  {
    auto [kb_f, kb_m] = split_series(divergence.pca_k_bar, "k_bar", "#1f77b4", "#17becf");
    auto [ku_f, ku_m] = split_series(divergence.pca_k_u, "k_u", "#d62728", "#ff9896");
    write_file_atomic(fs::path(rc.out_dir) / "diagnose_keys.svg",
                      scatter_svg({kb_f, kb_m, ku_f, ku_m},
                                  "prefixed vs unprefixed keys", "pc1", "pc2"));
  }
  {
    auto [cb_f, cb_m] =
        split_series(divergence.pca_cinv_k_bar, "C^-1 k_bar", "#2ca02c", "#98df8a");
    auto [ku_f, ku_m] = split_series(divergence.pca_k_u, "k_u", "#d62728", "#ff9896");
    write_file_atomic(fs::path(rc.out_dir) / "diagnose_denominator_elements.svg",
                      scatter_svg({cb_f, cb_m, ku_f, ku_m},
                                  "denominator elements", "pc1", "pc2"));
  }

  json jp;
  jp["layers"] = profile.layers;
  jp["d_first"] = profile.d_first;
  jp["d_subsequent"] = profile.d_subsequent;
  write_report(rc, "diagnose_profile.json", std::move(jp),
               {{"weights", file_hash(rc.weights)}, {"suite", file_hash(rc.suite)}});
  std::string pcsv = "layer,d_first,d_subsequent\n";
  for (std::size_t i = 0; i < profile.layers.size(); ++i) {
    pcsv += std::to_string(profile.layers[i]) + "," + csv_num(profile.d_first[i]) +
            "," + csv_num(profile.d_subsequent[i]) + "\n";
  }
  write_csv(rc, "diagnose_profile.csv", pcsv);
  {
    ScatterSeries f{"D(first)", "#d62728", {}};
    ScatterSeries s{"D(subsequent)", "#1f77b4", {}};
    for (std::size_t i = 0; i < profile.layers.size(); ++i) {
      f.points.push_back({static_cast<double>(profile.layers[i]), profile.d_first[i]});
      s.points.push_back(
          {static_cast<double>(profile.layers[i]), profile.d_subsequent[i]});
    }
    write_file_atomic(fs::path(rc.out_dir) / "diagnose_profile.svg",
                      scatter_svg({f, s}, "first-token concentration by layer",
                                  "layer", "mean distance to centroid"));
  }
  return 0;
}

int cmd_eval(RunConfig rc) {
  TinyLM model = load_model(rc.weights);
  SecondMoment sm = load_second_moment(rc.cov_path);
  auto cases = load_cases(rc);
  const TokenSeq corpus = load_corpus(rc.corpus);
  const TokenSeq probe = holdout_slice(rc, corpus);

  std::vector<EvalRow> rows;
  json failures = json::array();
  for (const auto& c : cases) {
    EditRequest request = c.edit;
    request.mode = rc.mode;
    request.prefixes = prefixes_for_case(rc, model, c.edit.id);
    try {
      EditResult r = edit(model, request, sm, rc.value_search, rc.denom_floor);
      EvalCase prefixed_case = c;
      prefixed_case.edit.prefixes = request.prefixes;
      rows.push_back(evaluate_case(model, r.model, prefixed_case, rc.eval_prefix_mode,
                                   probe, case_seed(rc, c.edit.id)));
    } catch (const Error& e) {
      failures.push_back({{"case_id", c.edit.id}, {"error", e.what()}});
    }
  }
  EvalReport report = aggregate_eval(rows);

  json jr;
  jr["prefix_mode"] = to_string(rc.eval_prefix_mode);
  jr["mode"] = to_string(rc.mode);
  jr["rows"] = json::array();
  for (const auto& row : report.rows) {
    json r = {{"case_id", row.case_id},
              {"group", row.group},
              {"efficacy", row.efficacy_value},
              {"ppl_before", row.ppl_before},
              {"ppl_after", row.ppl_after}};
    if (row.generalization) r["generalization"] = *row.generalization;
    if (row.locality) r["locality"] = *row.locality;
    jr["rows"].push_back(std::move(r));
  }
  jr["groups"] = json::array();
  for (const auto& g : report.groups) {
    json r = {{"group", g.group},
              {"count", g.count},
              {"efficacy", g.efficacy_rate},
              {"mean_ppl_ratio", g.mean_ppl_ratio}};
    if (g.mean_generalization) r["generalization"] = *g.mean_generalization;
    if (g.mean_locality) r["locality"] = *g.mean_locality;
    jr["groups"].push_back(std::move(r));
  }
  jr["failures"] = failures;
  write_report(rc, "eval_report.json", std::move(jr),
               {{"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)},
                {"suite", file_hash(rc.suite)},
                {"corpus", file_hash(rc.corpus)}});

  std::string csv =
      "case_id,group,efficacy,generalization,locality,ppl_before,ppl_after\n";
  for (const auto& row : report.rows) {
    csv += row.case_id + "," + row.group + "," + (row.efficacy_value ? "1" : "0") +
           "," + (row.generalization ? csv_num(*row.generalization) : "") + "," +
           (row.locality ? csv_num(*row.locality) : "") + "," +
           csv_num(row.ppl_before) + "," + csv_num(row.ppl_after) + "\n";
  }
  write_csv(rc, "eval_rows.csv", csv);
  return 0;
}

json benchmark_json(const CollapseBenchmark& bench) {
  json jb;
  jb["baseline_ppl"] = bench.baseline_ppl;
  jb["cases"] = json::array();
  for (const auto& r : bench.cases) {
    json c = {{"case_id", r.case_id}, {"group", r.group}, {"failed", r.failed}};
    if (r.failed) {
      c["error"] = r.error;
    } else {
      c["denominator"] = r.denominator;
      c["ppl_after"] = r.ppl_after;
      c["ppl_ratio"] = r.ppl_after / bench.baseline_ppl;
    }
    jb["cases"].push_back(std::move(c));
  }
  jb["groups"] = json::array();
  for (const auto& g : bench.groups) {
    jb["groups"].push_back({{"group", g.group},
                            {"count", g.count},
                            {"max_ppl", g.max_ppl},
                            {"mean_ppl", g.mean_ppl},
                            {"mean_abs_denominator", g.mean_abs_denominator}});
  }
  return jb;
}

int cmd_sweep(RunConfig rc) {
  TinyLM model = load_model(rc.weights);
  SecondMoment sm = load_second_moment(rc.cov_path);
  auto cases = load_cases(rc);
  const TokenSeq corpus = load_corpus(rc.corpus);
  const TokenSeq probe = holdout_slice(rc, corpus);

  for (auto& c : cases) {
    c.edit.prefixes = prefixes_for_case(rc, model, c.edit.id);
  }

  json grid = json::array();
  std::string csv =
      "mode,variant,group,count,max_ppl,mean_ppl,mean_abs_denominator,baseline_ppl\n";
  for (EditMode mode : {EditMode::rome_inconsistent, EditMode::c_rome}) {
    AblationReport rep =
        ablation_suite(model, cases, mode, sm, rc.value_search, probe);
    for (const auto& entry : rep.entries) {
      json cell;
      cell["mode"] = to_string(mode);
      cell["variant"] = to_string(entry.variant);
      cell["benchmark"] = benchmark_json(entry.benchmark);
      grid.push_back(std::move(cell));
      for (const auto& g : entry.benchmark.groups) {
        csv += to_string(mode) + "," + to_string(entry.variant) + "," + g.group +
               "," + std::to_string(g.count) + "," + csv_num(g.max_ppl) + "," +
               csv_num(g.mean_ppl) + "," + csv_num(g.mean_abs_denominator) + "," +
               csv_num(entry.benchmark.baseline_ppl) + "\n";
      }
    }
  }
  json results;
  results["grid"] = std::move(grid);
  write_report(rc, "sweep_report.json", std::move(results),
               {{"weights", file_hash(rc.weights)},
                {"covariance", file_hash(rc.cov_path)},
                {"suite", file_hash(rc.suite)},
                {"corpus", file_hash(rc.corpus)}});
  write_csv(rc, "sweep_table.csv", csv);
  return 0;
}

int cmd_gen_corpus(const std::string& corpus_path, const std::string& suite_path,
                   std::size_t bytes, std::size_t n_first, std::size_t n_mid,
                   std::uint64_t seed) {
  SyntheticWorld world = generate_world(bytes, n_first, n_mid, seed);
  write_file_atomic(corpus_path, world.corpus);
  write_file_atomic(suite_path, world.suite_jsonl);
  std::cout << "corpus: " << corpus_path << " (" << world.corpus.size()
            << " bytes)\nsuite: " << suite_path << "\n";
  return 0;
}

std::string error_type_name(const std::exception& e) {
  if (dynamic_cast<const ConfigInvalid*>(&e)) return "ConfigInvalid";
  if (dynamic_cast<const IoError*>(&e)) return "IoError";
  if (dynamic_cast<const DenominatorBelowFloor*>(&e)) return "DenominatorBelowFloor";
  if (dynamic_cast<const NotPositiveDefinite*>(&e)) return "NotPositiveDefinite";
  if (dynamic_cast<const DimensionMismatch*>(&e)) return "DimensionMismatch";
  if (dynamic_cast<const SequenceTooLong*>(&e)) return "SequenceTooLong";
  if (dynamic_cast<const SequenceTooShort*>(&e)) return "SequenceTooShort";
  if (dynamic_cast<const TokenOutOfRange*>(&e)) return "TokenOutOfRange";
  if (dynamic_cast<const CorpusTooSmall*>(&e)) return "CorpusTooSmall";
  if (dynamic_cast<const NonFiniteLoss*>(&e)) return "NonFiniteLoss";
  if (dynamic_cast<const DegenerateSpread*>(&e)) return "DegenerateSpread";
  if (dynamic_cast<const EmptyInput*>(&e)) return "EmptyInput";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "Exception";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-one model editing laboratory"};
  app.require_subcommand(1);
  // global flags may appear after the subcommand name
  app.fallthrough();

  std::string config_path;
  std::string case_id;
  std::string mode_override, prefix_test_override, out_override, format_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  app.add_option("--config", config_path, "run configuration file (JSON)");
  app.add_option("--case", case_id, "case id within the suite");
  app.add_option("--mode", mode_override, "edit mode: rome | c-rome");
  app.add_option("--prefix-test", prefix_test_override,
                 "prefix the test prompt of first-token cases: on | off");
  app.add_option("--seed", seed_override, "seed override")
      ->each([&](const std::string&) { seed_given = true; });
  app.add_option("--out", out_override, "output directory override");
  app.add_option("--format", format_override, "report format: json | csv | both");

  auto* train_cmd = app.add_subcommand("train", "train a model on the corpus");
  auto* cov_cmd =
      app.add_subcommand("estimate-cov", "estimate the key second moment");
  auto* edit_cmd = app.add_subcommand("edit", "apply one edit from the suite");
  auto* diag_cmd =
      app.add_subcommand("diagnose", "denominator, divergence and profile reports");
  auto* eval_cmd = app.add_subcommand("eval", "efficacy/generalization/locality");
  auto* sweep_cmd = app.add_subcommand("sweep", "mode x ablation-variant grid");

  auto* gen_cmd = app.add_subcommand("gen-corpus", "emit a synthetic corpus + suite");
  std::string gen_corpus_path = "data/corpus.txt";
  std::string gen_suite_path = "data/suite.jsonl";
  std::size_t gen_bytes = 384 * 1024, gen_first = 24, gen_mid = 24;
  std::uint64_t gen_seed = 1234;
  gen_cmd->add_option("--corpus-out", gen_corpus_path, "corpus output path");
  gen_cmd->add_option("--suite-out", gen_suite_path, "suite output path");
  gen_cmd->add_option("--bytes", gen_bytes, "corpus size in bytes");
  gen_cmd->add_option("--first-token-cases", gen_first, "letter-subject cases");
  gen_cmd->add_option("--mid-sequence-cases", gen_mid, "city-subject cases");
  gen_cmd->add_option("--gen-seed", gen_seed, "world seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      return cmd_gen_corpus(gen_corpus_path, gen_suite_path, gen_bytes, gen_first,
                            gen_mid, gen_seed);
    }
    if (config_path.empty()) throw ConfigInvalid("--config <path> is required");
    RunConfig rc = load_run_config(config_path);
    if (!mode_override.empty()) rc.mode = edit_mode_from_string(mode_override);
    if (!prefix_test_override.empty()) {
      if (prefix_test_override == "on") rc.eval_prefix_mode = PrefixMode::random_prefix;
      else if (prefix_test_override == "off") rc.eval_prefix_mode = PrefixMode::none;
      else throw ConfigInvalid("--prefix-test must be on or off");
    }
    if (seed_given) rc.seed = seed_override;
    if (!out_override.empty()) rc.out_dir = out_override;
    if (!format_override.empty()) {
      rc.emit_json = format_override == "json" || format_override == "both";
      rc.emit_csv = format_override == "csv" || format_override == "both";
      if (!rc.emit_json && !rc.emit_csv) {
        throw ConfigInvalid("--format must be json, csv or both");
      }
    }
    rc.resolved = resolve_config_json(rc);

    if (train_cmd->parsed()) return cmd_train(std::move(rc));
    if (cov_cmd->parsed()) return cmd_estimate_cov(std::move(rc));
    if (edit_cmd->parsed()) return cmd_edit(std::move(rc), case_id);
    if (diag_cmd->parsed()) return cmd_diagnose(std::move(rc));
    if (eval_cmd->parsed()) return cmd_eval(std::move(rc));
    if (sweep_cmd->parsed()) return cmd_sweep(std::move(rc));
    throw ConfigInvalid("no subcommand given");
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"type", error_type_name(e)}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
