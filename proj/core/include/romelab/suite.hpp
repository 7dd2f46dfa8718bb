#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "romelab/eval.hpp"

namespace romelab {

// Line-delimited JSON, one case per line:
//   {"id": "ft00", "subject": "K", "prompt": "{s} stands for ",
//    "old": "F", "new": "M",
//    "paraphrases": ["Many claim {s} stands for "],
//    "locality": [{"prompt": "Q stands for ", "expected": "G"}]}
// "{s}" marks the subject span inside prompts. Objects are single bytes.
// Locality prompts must not contain the subject text.
std::vector<EvalCase> parse_suite(const std::string& jsonl);
std::vector<EvalCase> load_suite(const std::filesystem::path& path);

}  // namespace romelab
