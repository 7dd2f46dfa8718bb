#include <doctest.h>

#include <filesystem>

#include "romelab/container.hpp"
#include "romelab/corpus.hpp"
#include "romelab/errors.hpp"
#include "romelab/suite.hpp"
#include "romelab/svg.hpp"
#include "test_utils.hpp"

using namespace romelab;
using namespace romelab::testutil;

TEST_CASE("container round-trips tensors and metadata bit-exactly") {
  Container c;
  c.metadata["kind"] = "test";
  c.metadata["note"] = 42;
  NamedTensor t;
  t.name = "weights";
  t.shape = {2, 3};
  t.data = {1.0, -2.5, 3.25, 0.0, 1e-300, 7.75};
  c.tensors.push_back(t);

  const auto path = std::filesystem::temp_directory_path() / "romelab_cont_rt.rlab";
  save_container(path, c);
  Container r = load_container(path);

  CHECK(r.metadata.at("kind") == "test");
  CHECK(r.metadata.at("note") == 42);
  REQUIRE(r.tensors.size() == 1);
  CHECK(r.tensors[0].name == "weights");
  CHECK(r.tensors[0].shape == t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    CHECK(r.tensors[0].data[i] == t.data[i]);
  }

  // identical saves produce identical bytes
  const auto path2 = std::filesystem::temp_directory_path() / "romelab_cont_rt2.rlab";
  save_container(path2, c);
  CHECK(read_file(path) == read_file(path2));
  CHECK(file_hash(path) == file_hash(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("container rejects corrupt input") {
  const auto path = std::filesystem::temp_directory_path() / "romelab_cont_bad.rlab";
  write_file_atomic(path, "NOPE");
  CHECK_THROWS_AS(load_container(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_container(path), IoError);  // missing file
}

TEST_CASE("content hash is stable") {
  CHECK(content_hash("") == "fnv1a64:cbf29ce484222325");
  CHECK(content_hash("a") != content_hash("b"));
}

TEST_CASE("suite parsing builds validated cases") {
  const std::string jsonl =
      R"({"id":"x1","subject":"K","prompt":"{s} stands for ","old":"F","new":"M","paraphrases":["so {s} stands for "],"locality":[{"prompt":"Q stands for ","expected":"G"}]})"
      "\n"
      R"({"id":"x2","subject":"Avendale","prompt":"The city of {s} lies in ","old":"F","new":"G"})"
      "\n";
  auto cases = parse_suite(jsonl);
  REQUIRE(cases.size() == 2);
  CHECK(cases[0].edit.id == "x1");
  CHECK(cases[0].edit.subject_tokens == tokens_of("K"));
  CHECK(cases[0].edit.subject_span_begin == 0);
  CHECK(cases[0].edit.subject_span_len == 1);
  CHECK(cases[0].edit.old_object == 'F');
  CHECK(cases[0].edit.prompt_tokens == tokens_of("K stands for "));
  CHECK(cases[0].group() == "first_token");
  CHECK(cases[0].paraphrase_prompts[0] == tokens_of("so K stands for "));
  CHECK(cases[0].locality_prompts[0].expected == 'G');

  CHECK(cases[1].edit.subject_span_begin == 12);
  CHECK(cases[1].group() == "mid_sequence");
  CHECK(cases[1].edit.target_pos() == cases[1].edit.prompt_tokens.size() - 1);
}

TEST_CASE("suite parsing rejects malformed cases") {
  CHECK_THROWS_AS(parse_suite(R"({"subject":"K","prompt":"no marker","old":"F","new":"M"})"),
                  ConfigInvalid);
  CHECK_THROWS_AS(
      parse_suite(R"({"subject":"K","prompt":"{s} x","old":"FF","new":"M"})"),
      ConfigInvalid);
  CHECK_THROWS_AS(
      parse_suite(R"({"subject":"K","prompt":"{s} x","old":"F","new":"F"})"),
      ConfigInvalid);
  // locality prompt containing the subject is refused
  CHECK_THROWS_AS(
      parse_suite(
          R"({"subject":"K","prompt":"{s} x","old":"F","new":"M","locality":[{"prompt":"K y","expected":"Z"}]})"),
      ConfigInvalid);
  CHECK_THROWS_AS(parse_suite("not json\n"), ConfigInvalid);
}

TEST_CASE("generated world is self-consistent") {
  SyntheticWorld w = generate_world(32 * 1024, 20, 20, 7);
  CHECK(w.corpus.size() >= 32 * 1024);

  auto cases = parse_suite(w.suite_jsonl);  // loader re-validates every invariant
  REQUIRE(cases.size() == 40);
  std::size_t first = 0, mid = 0;
  for (const auto& c : cases) {
    if (c.group() == "first_token") ++first;
    if (c.group() == "mid_sequence") ++mid;
    CHECK(!c.paraphrase_prompts.empty());
    CHECK(!c.locality_prompts.empty());
    // the corpus teaches the fact this case will rewrite
    const std::string prompt = tokens_to_bytes(c.edit.prompt_tokens);
    const std::string taught =
        prompt + static_cast<char>(static_cast<unsigned char>(c.edit.old_object));
    CHECK(w.corpus.find(taught) != std::string::npos);
    CHECK(w.corpus.find(prompt + static_cast<char>(static_cast<unsigned char>(
                                     c.edit.new_object))) == std::string::npos);
  }
  CHECK(first == 20);
  CHECK(mid == 20);

  // determinism
  SyntheticWorld w2 = generate_world(32 * 1024, 20, 20, 7);
  CHECK(w.corpus == w2.corpus);
  CHECK(w.suite_jsonl == w2.suite_jsonl);
}

TEST_CASE("svg scatter emission is deterministic and well-formed") {
  std::vector<ScatterSeries> series = {
      {"alpha", "#1f77b4", {{0.0, 0.0}, {1.0, 2.0}}},
      {"beta", "#d62728", {{-1.0, 0.5}}},
  };
  const std::string svg = scatter_svg(series, "demo", "x", "y");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg.find("circle") != std::string::npos);
  CHECK(svg == scatter_svg(series, "demo", "x", "y"));
}
