#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dpm/example.hpp"
#include "dpm/vocab.hpp"

namespace dpm {

// Lowercases, splits on whitespace and strips leading/trailing ASCII
// punctuation from each piece; pieces that become empty are dropped.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

// One JSONL record before id mapping.
struct RawExample {
  std::string s1;
  std::string s2;
  std::size_t label = 0;
  std::size_t line = 0;  // 1-based line in the source file
};

// Parses {"s1": str, "s2": str, "label": int} per line. Blank lines are
// skipped. Throws DataError with the line number for malformed JSON, a
// missing or mistyped field, a label >= n_classes, or a sentence with no
// tokens.
std::vector<RawExample> read_jsonl(const std::filesystem::path& path, std::size_t n_classes);
std::vector<RawExample> parse_jsonl(std::string_view text, std::size_t n_classes);

Example to_example(const RawExample& raw, const Vocab& vocab);
Dataset to_dataset(std::span<const RawExample> raw, const Vocab& vocab);
Dataset load_jsonl(const std::filesystem::path& path, const Vocab& vocab, std::size_t n_classes);

std::string to_jsonl(const Dataset& data);
void save_jsonl(const std::filesystem::path& path, const Dataset& data);

// Synonym groups, symmetric antonym pairs and optional neutral fillers.
struct Lexicon {
  std::vector<std::vector<std::string>> synonyms;
  std::vector<std::pair<std::string, std::string>> antonyms;
  std::vector<std::string> fillers;

  // Throws DataError if an antonym pair is reflexive, a token has two
  // different antonyms, or a token shares a synonym group with its antonym.
  void validate() const;

  // Other members of the token's synonym group(s), in lexicon order.
  std::vector<std::string> synonyms_of(const std::string& token) const;
  std::optional<std::string> antonym_of(const std::string& token) const;
  // Appears in a synonym group or an antonym pair.
  bool is_content(const std::string& token) const;
  // Every token mentioned anywhere, first-appearance order.
  std::vector<std::string> all_tokens() const;

  bool operator==(const Lexicon&) const = default;
};

nlohmann::json to_json(const Lexicon& lexicon);
Lexicon lexicon_from_json(const nlohmann::json& j);
Lexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const std::filesystem::path& path, const Lexicon& lexicon);

// Tokens of the raw training sentences in first-appearance order, then any
// lexicon tokens not yet present.
Vocab build_vocab(std::span<const RawExample> train, const Lexicon* lexicon = nullptr);

enum class SynthTask { kOverlap, kSwapAnt, kParaphrase };

std::string synth_task_name(SynthTask task);
// Accepts OVERLAP, SWAP_ANT, PARAPHRASE (case-insensitive). Throws ConfigError.
SynthTask parse_synth_task(const std::string& name);

struct SynthTaskSpec {
  SynthTask task = SynthTask::kSwapAnt;
  std::size_t vocab_size = 120;  // word tokens, excluding the four reserved ids
  std::size_t min_len = 6;
  std::size_t max_len = 10;
  std::size_t n_examples = 2000;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthData {
  Lexicon lexicon;
  Vocab vocab;
  Dataset train;
  Dataset dev;
  Dataset test;
};

// Generated lexicon over tokens w0..w{V-1}: the first 6*floor(0.8V/6) are
// split into synonym triples, triple 2k paired elementwise as antonyms with
// triple 2k+1; the rest are fillers.
Lexicon synthetic_lexicon(std::size_t vocab_size);

// Throws DataError if 100 attempts fail to give every split a class balance
// within [0.45, 0.55].
SynthData gen_synthetic(const SynthTaskSpec& spec);

struct Balance {
  std::size_t n = 0;
  std::vector<std::size_t> counts;  // per class
  double fraction(std::size_t label) const;
};

Balance class_balance(const Dataset& data, std::size_t n_classes);
bool balanced(const Balance& b, double lo = 0.45, double hi = 0.55);

enum class Transform { kSwapSyn, kSwapAnt, kInsertTok, kDeleteTok };

std::string transform_name(Transform t);
// Accepts SwapSyn, SwapAnt, InsertTok, DeleteTok (case-insensitive).
Transform parse_transform(const std::string& name);

struct PerturbResult {
  Dataset data;
  std::size_t dropped = 0;
};

// Edits s2 of every example once. Examples with no eligible position are
// dropped and counted. Throws DataError if nothing in the dataset is
// eligible.
PerturbResult perturb(const Dataset& data, Transform transform, const Lexicon& lexicon, const Vocab& vocab,
                      std::uint64_t seed, std::size_t negative_label = 0);

}  // namespace dpm
