#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "romelab/model.hpp"

namespace romelab {

TokenSeq bytes_to_tokens(std::string_view bytes);
std::string tokens_to_bytes(const TokenSeq& tokens);

// Raw UTF-8 bytes, one token per byte.
TokenSeq load_corpus(const std::filesystem::path& path);

// Deterministic synthetic text world: templated English-like sentences that
// tie single-letter subjects ("K stands for Morvia.") and multi-word city
// subjects ("The city of Avendale lies in Fenmark.") to consistent objects,
// padded with filler prose. The matching edit suite rewrites those objects.
struct SyntheticWorld {
  std::string corpus;
  std::string suite_jsonl;
};

SyntheticWorld generate_world(std::size_t corpus_bytes, std::size_t n_first_token,
                              std::size_t n_mid_sequence, std::uint64_t seed);

}  // namespace romelab
