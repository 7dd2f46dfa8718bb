#include "romelab/suite.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "romelab/container.hpp"
#include "romelab/corpus.hpp"
#include "romelab/errors.hpp"

namespace romelab {

namespace {

constexpr const char* kMarker = "{s}";

// Replaces the single "{s}" marker with the subject and returns the byte
// index where the subject starts, or npos when the marker is absent.
std::size_t substitute_marker(std::string& text, const std::string& subject) {
  const std::size_t pos = text.find(kMarker);
  if (pos == std::string::npos) return std::string::npos;
  if (text.find(kMarker, pos + 1) != std::string::npos) {
    throw ConfigInvalid("suite: prompt contains more than one {s} marker");
  }
  text = text.substr(0, pos) + subject + text.substr(pos + 3);
  return pos;
}

int single_byte_token(const nlohmann::json& j, const char* field, std::size_t line) {
  const std::string s = j.at(field).get<std::string>();
  if (s.size() != 1) {
    throw ConfigInvalid("suite line " + std::to_string(line) + ": '" + field +
                        "' must be exactly one byte");
  }
  return static_cast<int>(static_cast<unsigned char>(s[0]));
}

}  // namespace

std::vector<EvalCase> parse_suite(const std::string& jsonl) {
  std::vector<EvalCase> cases;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigInvalid("suite line " + std::to_string(line_no) + ": " + e.what());
    }

    EvalCase c;
    const std::string subject = j.at("subject").get<std::string>();
    if (subject.empty()) {
      throw ConfigInvalid("suite line " + std::to_string(line_no) + ": empty subject");
    }
    c.edit.id = j.value("id", "case" + std::to_string(line_no));
    c.edit.subject_tokens = bytes_to_tokens(subject);

    std::string prompt = j.at("prompt").get<std::string>();
    const std::size_t span = substitute_marker(prompt, subject);
    if (span == std::string::npos) {
      throw ConfigInvalid("suite line " + std::to_string(line_no) +
                          ": prompt lacks the {s} marker");
    }
    c.edit.prompt_tokens = bytes_to_tokens(prompt);
    c.edit.subject_span_begin = span;
    c.edit.subject_span_len = subject.size();
    c.edit.old_object = single_byte_token(j, "old", line_no);
    c.edit.new_object = single_byte_token(j, "new", line_no);

    for (const auto& p : j.value("paraphrases", nlohmann::json::array())) {
      std::string para = p.get<std::string>();
      if (substitute_marker(para, subject) == std::string::npos) {
        throw ConfigInvalid("suite line " + std::to_string(line_no) +
                            ": paraphrase lacks the {s} marker");
      }
      c.paraphrase_prompts.push_back(bytes_to_tokens(para));
    }

    for (const auto& p : j.value("locality", nlohmann::json::array())) {
      const std::string prompt_text = p.at("prompt").get<std::string>();
      if (prompt_text.find(subject) != std::string::npos) {
        throw ConfigInvalid("suite line " + std::to_string(line_no) +
                            ": locality prompt contains the subject");
      }
      LocalityProbe probe;
      probe.prompt = bytes_to_tokens(prompt_text);
      const std::string expected = p.at("expected").get<std::string>();
      if (expected.size() != 1) {
        throw ConfigInvalid("suite line " + std::to_string(line_no) +
                            ": locality 'expected' must be one byte");
      }
      probe.expected = static_cast<int>(static_cast<unsigned char>(expected[0]));
      c.locality_prompts.push_back(std::move(probe));
    }

    c.edit.validate();
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<EvalCase> load_suite(const std::filesystem::path& path) {
  return parse_suite(read_file(path));
}

}  // namespace romelab
