#include "romelab/corpus.hpp"

#include <array>
#include <cstdio>
#include <vector>

#include <nlohmann/json.hpp>

#include "romelab/container.hpp"
#include "romelab/errors.hpp"
#include "romelab/rng.hpp"

namespace romelab {

TokenSeq bytes_to_tokens(std::string_view bytes) {
  TokenSeq tokens;
  tokens.reserve(bytes.size());
  for (unsigned char c : bytes) tokens.push_back(static_cast<int>(c));
  return tokens;
}

std::string tokens_to_bytes(const TokenSeq& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t > 255) {
      throw TokenOutOfRange("tokens_to_bytes: token " + std::to_string(t) +
                            " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

TokenSeq load_corpus(const std::filesystem::path& path) {
  return bytes_to_tokens(read_file(path));
}

namespace {

const std::array<const char*, 24> kCountries = {
    "Ashfeld",  "Bellmar",  "Corvane",  "Durnholm", "Ellmere",  "Fenmark",
    "Galdoria", "Hollin",   "Ivarron",  "Jendale",  "Kestria",  "Morvia",
    "Norvale",  "Ostrel",   "Pellunia", "Quenland", "Rostorn",  "Selvara",
    "Tressin",  "Umbria",   "Vostra",   "Wrenfell", "Yandor",   "Zembra"};

const std::array<const char*, 24> kCities = {
    "Avendale",  "Brockton",  "Camberly",  "Dunmore",    "Eastvale",  "Farrowmere",
    "Glenshire", "Harwick",   "Ironstead", "Juneport",   "Kelsmore",  "Lornwell",
    "Marrowgate", "Nethercliff", "Oakhurst", "Pellbrook", "Quarrytown", "Ravenmoor",
    "Stonebray", "Thornbury", "Umberfield", "Vexley",    "Westmarch", "Yarrowdale"};

const std::array<const char*, 8> kGoods = {"copper", "salt",  "timber", "wool",
                                           "grain",  "amber", "iron",   "flax"};

struct World {
  // letter subjects 'A'..'Z' -> country index; city index -> country index
  std::array<std::size_t, 26> letter_fact{};
  std::array<std::size_t, kCities.size()> city_fact{};
};

World build_world(Rng& rng) {
  World w;
  for (std::size_t i = 0; i < 26; ++i) {
    std::size_t pick = rng.next_below(kCountries.size());
    // a letter never stands for a country sharing its initial
    while (kCountries[pick][0] == static_cast<char>('A' + i)) {
      pick = (pick + 1) % kCountries.size();
    }
    w.letter_fact[i] = pick;
  }
  for (std::size_t i = 0; i < kCities.size(); ++i) {
    w.city_fact[i] = rng.next_below(kCountries.size());
  }
  return w;
}

std::string letter_sentence(const World& w, std::size_t i) {
  std::string s(1, static_cast<char>('A' + i));
  return s + " stands for " + kCountries[w.letter_fact[i]] + ". ";
}

std::string city_sentence(const World& w, std::size_t i) {
  return std::string("The city of ") + kCities[i] + " lies in " +
         kCountries[w.city_fact[i]] + ". ";
}

std::string filler_sentence(Rng& rng) {
  switch (rng.next_below(6)) {
    case 0:
      return std::string("Merchants carried ") + kGoods[rng.next_below(kGoods.size())] +
             " from " + kCities[rng.next_below(kCities.size())] + " to " +
             kCities[rng.next_below(kCities.size())] + " before winter. ";
    case 1:
      return std::string("The road to ") + kCities[rng.next_below(kCities.size())] +
             " follows the river for many miles. ";
    case 2:
      return std::string("Traders spoke of storms near the coast of ") +
             kCountries[rng.next_below(kCountries.size())] + ". ";
    case 3:
      return std::string("Every market day the square of ") +
             kCities[rng.next_below(kCities.size())] + " fills with wagons. ";
    case 4:
      return std::string("Column ") +
             static_cast<char>('A' + rng.next_below(26)) +
             " of the ledger was filled first. ";
    default:
      return std::string("Harvest wagons brought ") +
             kGoods[rng.next_below(kGoods.size())] + " to the markets of " +
             kCountries[rng.next_below(kCountries.size())] + ". ";
  }
}

}  // namespace

SyntheticWorld generate_world(std::size_t corpus_bytes, std::size_t n_first_token,
                              std::size_t n_mid_sequence, std::uint64_t seed) {
  if (n_first_token > 26 || n_mid_sequence > kCities.size()) {
    throw ConfigInvalid("generate_world: at most 26 letter cases and " +
                        std::to_string(kCities.size()) + " city cases");
  }
  Rng rng(seed);
  const World world = build_world(rng);

  std::string corpus;
  corpus.reserve(corpus_bytes + 256);
  std::size_t letter_rr = 0, city_rr = 0, sentence_count = 0;
  while (corpus.size() < corpus_bytes) {
    corpus += letter_sentence(world, letter_rr++ % 26);
    corpus += filler_sentence(rng);
    corpus += city_sentence(world, city_rr++ % kCities.size());
    corpus += filler_sentence(rng);
    if (++sentence_count % 4 == 0) corpus += "\n";
  }

  // Edit suite over the same facts. New objects come from a different
  // country whose initial differs from the old one.
  auto pick_new = [&](std::size_t old_idx) {
    std::size_t idx = (old_idx + 5) % kCountries.size();
    while (kCountries[idx][0] == kCountries[old_idx][0]) {
      idx = (idx + 1) % kCountries.size();
    }
    return idx;
  };

  auto locality_for = [&](const std::string& subject, std::size_t skip_letter,
                          std::size_t skip_city) {
    nlohmann::ordered_json probes = nlohmann::ordered_json::array();
    std::size_t taken = 0;
    for (std::size_t j = 0; j < 26 && taken < 3; ++j) {
      if (j == skip_letter) continue;
      const std::string prompt = std::string(1, static_cast<char>('A' + j)) +
                                 " stands for ";
      if (prompt.find(subject) != std::string::npos) continue;
      probes.push_back({{"prompt", prompt},
                        {"expected", std::string(1, kCountries[world.letter_fact[j]][0])}});
      ++taken;
    }
    for (std::size_t j = 0; j < kCities.size() && taken < 5; ++j) {
      if (j == skip_city) continue;
      const std::string prompt =
          std::string("The city of ") + kCities[j] + " lies in ";
      if (prompt.find(subject) != std::string::npos) continue;
      probes.push_back({{"prompt", prompt},
                        {"expected", std::string(1, kCountries[world.city_fact[j]][0])}});
      ++taken;
    }
    return probes;
  };

  std::string suite;
  char idbuf[32];
  for (std::size_t i = 0; i < n_first_token; ++i) {
    const std::size_t old_idx = world.letter_fact[i];
    const std::size_t new_idx = pick_new(old_idx);
    const std::string subject(1, static_cast<char>('A' + i));
    std::snprintf(idbuf, sizeof idbuf, "ft%02zu", i);
    nlohmann::ordered_json j;
    j["id"] = idbuf;
    j["subject"] = subject;
    j["prompt"] = "{s} stands for ";
    j["old"] = std::string(1, kCountries[old_idx][0]);
    j["new"] = std::string(1, kCountries[new_idx][0]);
    j["paraphrases"] = {"Many traders claim {s} stands for ",
                        "It is said {s} stands for ",
                        "According to the charts {s} stands for "};
    j["locality"] = locality_for(subject, i, kCities.size());
    suite += j.dump();
    suite += "\n";
  }
  for (std::size_t i = 0; i < n_mid_sequence; ++i) {
    const std::size_t old_idx = world.city_fact[i];
    const std::size_t new_idx = pick_new(old_idx);
    const std::string subject = kCities[i];
    std::snprintf(idbuf, sizeof idbuf, "mid%02zu", i);
    nlohmann::ordered_json j;
    j["id"] = idbuf;
    j["subject"] = subject;
    j["prompt"] = "The city of {s} lies in ";
    j["old"] = std::string(1, kCountries[old_idx][0]);
    j["new"] = std::string(1, kCountries[new_idx][0]);
    j["paraphrases"] = {"Most maps agree the city of {s} lies in ",
                        "It is said the city of {s} lies in "};
    j["locality"] = locality_for(subject, 26, i);
    suite += j.dump();
    suite += "\n";
  }

  SyntheticWorld out;
  out.corpus = std::move(corpus);
  out.suite_jsonl = std::move(suite);
  return out;
}

}  // namespace romelab
