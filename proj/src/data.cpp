#include "dpm/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dpm/errors.hpp"
#include "dpm/random.hpp"

namespace dpm {
namespace {

bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> tokens_of(const std::string& raw, const TokenIds& ids, const Vocab& vocab) {
  if (!raw.empty()) return tokenize(raw);
  std::vector<std::string> out;
  for (std::size_t id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_ascii_punct(text[b])) ++b;
    while (e > b && is_ascii_punct(text[e - 1])) --e;
    if (b < e) out.push_back(lower(std::string(text.substr(b, e - b))));
    i = j;
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<RawExample> parse_jsonl(std::string_view text, std::size_t n_classes) {
  std::vector<RawExample> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(line_prefix(line_no) + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(line_prefix(line_no) + "expected a JSON object");
    RawExample r;
    r.line = line_no;
    for (const char* field : {"s1", "s2"}) {
      if (!j.contains(field)) throw DataError(line_prefix(line_no) + "missing field \"" + field + "\"");
      if (!j[field].is_string()) throw DataError(line_prefix(line_no) + "field \"" + field + "\" must be a string");
      const std::string value = j[field].get<std::string>();
      if (tokenize(value).empty()) throw DataError(line_prefix(line_no) + "field \"" + field + "\" has no tokens");
      (field[1] == '1' ? r.s1 : r.s2) = value;
    }
    if (!j.contains("label")) throw DataError(line_prefix(line_no) + "missing field \"label\"");
    const auto& label = j["label"];
    if (!label.is_number_integer() || (label.is_number_integer() && label.get<long long>() < 0)) {
      throw DataError(line_prefix(line_no) + "field \"label\" must be a non-negative integer");
    }
    r.label = label.get<std::size_t>();
    if (r.label >= n_classes) {
      throw DataError(line_prefix(line_no) + "label " + std::to_string(r.label) + " is outside [0, " +
                      std::to_string(n_classes) + ")");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawExample> read_jsonl(const std::filesystem::path& path, std::size_t n_classes) {
  try {
    return parse_jsonl(read_file(path), n_classes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Example to_example(const RawExample& raw, const Vocab& vocab) {
  Example e;
  e.raw_s1 = raw.s1;
  e.raw_s2 = raw.s2;
  e.s1 = vocab.encode(tokenize(raw.s1));
  e.s2 = vocab.encode(tokenize(raw.s2));
  e.label = raw.label;
  return e;
}

Dataset to_dataset(std::span<const RawExample> raw, const Vocab& vocab) {
  Dataset out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(to_example(r, vocab));
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path, const Vocab& vocab, std::size_t n_classes) {
  const auto raw = read_jsonl(path, n_classes);
  return to_dataset(raw, vocab);
}

std::string to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& e : data) {
    out += nlohmann::json{{"s1", e.raw_s1}, {"s2", e.raw_s2}, {"label", e.label}}.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& data) { write_file(path, to_jsonl(data)); }

void Lexicon::validate() const {
  std::map<std::string, std::string> ant;
  for (const auto& [a, b] : antonyms) {
    if (a == b) throw DataError("lexicon: token \"" + a + "\" is listed as its own antonym");
    for (const auto& [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
      auto [it, fresh] = ant.emplace(x, y);
      if (!fresh && it->second != y) {
        throw DataError("lexicon: token \"" + x + "\" has antonyms \"" + it->second + "\" and \"" + y + "\"");
      }
    }
  }
  for (const auto& group : synonyms) {
    for (const auto& t : group) {
      auto it = ant.find(t);
      if (it != ant.end() && contains(group, it->second)) {
        throw DataError("lexicon: \"" + t + "\" shares a synonym group with its antonym \"" + it->second + "\"");
      }
    }
  }
}

std::vector<std::string> Lexicon::synonyms_of(const std::string& token) const {
  std::vector<std::string> out;
  for (const auto& group : synonyms) {
    if (!contains(group, token)) continue;
    for (const auto& t : group)
      if (t != token && !contains(out, t)) out.push_back(t);
  }
  return out;
}

std::optional<std::string> Lexicon::antonym_of(const std::string& token) const {
  for (const auto& [a, b] : antonyms) {
    if (a == token) return b;
    if (b == token) return a;
  }
  return std::nullopt;
}

bool Lexicon::is_content(const std::string& token) const {
  for (const auto& group : synonyms)
    if (contains(group, token)) return true;
  return antonym_of(token).has_value();
}

std::vector<std::string> Lexicon::all_tokens() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto push = [&](const std::string& t) {
    if (seen.insert(t).second) out.push_back(t);
  };
  for (const auto& group : synonyms)
    for (const auto& t : group) push(t);
  for (const auto& [a, b] : antonyms) {
    push(a);
    push(b);
  }
  for (const auto& t : fillers) push(t);
  return out;
}

nlohmann::json to_json(const Lexicon& lexicon) {
  nlohmann::json ants = nlohmann::json::array();
  for (const auto& [a, b] : lexicon.antonyms) ants.push_back({a, b});
  nlohmann::json j{{"synonyms", lexicon.synonyms}, {"antonyms", ants}};
  if (!lexicon.fillers.empty()) j["fillers"] = lexicon.fillers;
  return j;
}

Lexicon lexicon_from_json(const nlohmann::json& j) {
  Lexicon lex;
  try {
    if (j.contains("synonyms")) lex.synonyms = j.at("synonyms").get<std::vector<std::vector<std::string>>>();
    if (j.contains("antonyms")) {
      for (const auto& pair : j.at("antonyms")) {
        if (!pair.is_array() || pair.size() != 2) throw DataError("lexicon: antonym entries must be pairs");
        lex.antonyms.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
      }
    }
    if (j.contains("fillers")) lex.fillers = j.at("fillers").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("lexicon: ") + e.what());
  }
  lex.validate();
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  try {
    return lexicon_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON: " + e.what());
  }
}

void save_lexicon(const std::filesystem::path& path, const Lexicon& lexicon) {
  write_file(path, to_json(lexicon).dump(1) + "\n");
}

Vocab build_vocab(std::span<const RawExample> train, const Lexicon* lexicon) {
  Vocab v;
  for (const auto& r : train) {
    for (const auto& t : tokenize(r.s1)) v.add(t);
    for (const auto& t : tokenize(r.s2)) v.add(t);
  }
  if (lexicon)
    for (const auto& t : lexicon->all_tokens()) v.add(t);
  return v;
}

std::string synth_task_name(SynthTask task) {
  switch (task) {
    case SynthTask::kOverlap: return "OVERLAP";
    case SynthTask::kSwapAnt: return "SWAP_ANT";
    case SynthTask::kParaphrase: return "PARAPHRASE";
  }
  return "?";
}

SynthTask parse_synth_task(const std::string& name) {
  const std::string n = lower(name);
  if (n == "overlap") return SynthTask::kOverlap;
  if (n == "swap_ant") return SynthTask::kSwapAnt;
  if (n == "paraphrase") return SynthTask::kParaphrase;
  throw ConfigError("task", "unknown synthetic task \"" + name + "\" (expected OVERLAP, SWAP_ANT or PARAPHRASE)");
}

void SynthTaskSpec::validate() const {
  if (vocab_size < 12) throw ConfigError("vocab_size", "synthetic vocabulary needs at least 12 tokens");
  if (min_len < 3 || min_len > max_len) throw ConfigError("min_len", "need 3 <= min_len <= max_len");
  if (max_len > vocab_size) throw ConfigError("max_len", "max_len exceeds vocabulary size");
  if (n_examples < 10) throw ConfigError("n_examples", "need at least 10 examples");
}

Lexicon synthetic_lexicon(std::size_t vocab_size) {
  auto word = [](std::size_t i) { return "w" + std::to_string(i); };
  const std::size_t lexical = 6 * ((8 * vocab_size) / 60);
  Lexicon lex;
  for (std::size_t g = 0; g < lexical / 3; ++g) lex.synonyms.push_back({word(3 * g), word(3 * g + 1), word(3 * g + 2)});
  for (std::size_t g = 0; g + 1 < lex.synonyms.size(); g += 2)
    for (std::size_t k = 0; k < 3; ++k) lex.antonyms.emplace_back(lex.synonyms[g][k], lex.synonyms[g + 1][k]);
  for (std::size_t i = lexical; i < vocab_size; ++i) lex.fillers.push_back(word(i));
  return lex;
}

namespace {

using Sentence = std::vector<std::string>;

struct Generator {
  const SynthTaskSpec& spec;
  const Lexicon& lex;
  const std::vector<std::string>& words;
  Rng& rng;

  Sentence sentence() {
    std::vector<std::string> pool = words;
    const std::size_t len = rng.range(spec.min_len, spec.max_len);
    Sentence s;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t k = rng.index(pool.size());
      s.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return s;
  }

  // Replacement candidates for position i: synonyms or the antonym of s[i],
  // excluding tokens already present in `reference`.
  std::vector<std::string> candidates(const Sentence& s, std::size_t i, bool antonym, const Sentence& reference) {
    std::vector<std::string> out;
    if (antonym) {
      if (auto a = lex.antonym_of(s[i])) out.push_back(*a);
    } else {
      out = lex.synonyms_of(s[i]);
    }
    std::erase_if(out, [&](const std::string& t) { return contains(reference, t); });
    return out;
  }

  std::vector<std::size_t> eligible(const Sentence& s, bool antonym, const std::vector<std::size_t>& skip = {}) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::find(skip.begin(), skip.end(), i) != skip.end()) continue;
      if (!candidates(s, i, antonym, s).empty()) out.push_back(i);
    }
    return out;
  }

  std::size_t substitute(const Sentence& s1, Sentence& s2, std::vector<std::size_t>& positions, bool antonym) {
    const auto options = eligible(s1, antonym, positions);
    const std::size_t i = options[rng.index(options.size())];
    const auto c = candidates(s1, i, antonym, s1);
    s2[i] = c[rng.index(c.size())];
    positions.push_back(i);
    return i;
  }

  // Fills s2 for the requested label; returns false if s1 cannot support it.
  bool pair(const Sentence& s1, std::size_t label, Sentence& s2) {
    s2 = s1;
    std::vector<std::size_t> used;
    switch (spec.task) {
      case SynthTask::kOverlap: {
        if (label == 0) {
          const std::size_t n = rng.range(1, 2);
          std::vector<std::size_t> idx(s1.size());
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
          rng.shuffle(idx);
          for (std::size_t k = 0; k < n; ++k) {
            std::string t;
            do t = words[rng.index(words.size())];
            while (contains(s1, t) || contains(s2, t));
            s2[idx[k]] = t;
          }
        }
        rng.shuffle(s2);
        return true;
      }
      case SynthTask::kSwapAnt: {
        if (eligible(s1, label == 0).empty()) return false;
        substitute(s1, s2, used, label == 0);
        return true;
      }
      case SynthTask::kParaphrase: {
        if (label == 0) {
          if (eligible(s1, true).empty()) return false;
          substitute(s1, s2, used, true);
          const std::size_t extra = std::min<std::size_t>(rng.range(0, 2), eligible(s1, false, used).size());
          for (std::size_t k = 0; k < extra; ++k) substitute(s1, s2, used, false);
        } else {
          const std::size_t avail = eligible(s1, false).size();
          if (avail == 0) return false;
          const std::size_t n = rng.range(1, std::min<std::size_t>(3, avail));
          for (std::size_t k = 0; k < n; ++k) substitute(s1, s2, used, false);
        }
        return true;
      }
    }
    return false;
  }
};

Example make_example(const Sentence& s1, const Sentence& s2, std::size_t label, const Vocab& vocab) {
  Example e;
  e.raw_s1 = detokenize(s1);
  e.raw_s2 = detokenize(s2);
  e.s1 = vocab.encode(s1);
  e.s2 = vocab.encode(s2);
  e.label = label;
  return e;
}

}  // namespace

SynthData gen_synthetic(const SynthTaskSpec& spec) {
  spec.validate();
  SynthData out;
  out.lexicon = synthetic_lexicon(spec.vocab_size);
  out.vocab = build_vocab({}, &out.lexicon);
  const std::vector<std::string> words(out.vocab.tokens().begin() + special::kCount, out.vocab.tokens().end());

  const std::size_t n_train = spec.n_examples * 8 / 10;
  const std::size_t n_dev = spec.n_examples / 10;
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(attempt)));
    Generator gen{spec, out.lexicon, words, rng};
    std::set<Sentence> seen;
    Dataset all;
    std::size_t failures = 0;
    while (all.size() < spec.n_examples) {
      const std::size_t label = rng.bernoulli(0.5) ? 1 : 0;
      const Sentence s1 = gen.sentence();
      Sentence s2;
      if (seen.count(s1) || !gen.pair(s1, label, s2)) {
        if (++failures > 100 * spec.n_examples) throw DataError("gen_synthetic: cannot find enough distinct sentences");
        continue;
      }
      seen.insert(s1);
      all.push_back(make_example(s1, s2, label, out.vocab));
    }
    Dataset train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    Dataset dev(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
    Dataset test(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), all.end());
    if (balanced(class_balance(train, 2)) && balanced(class_balance(dev, 2)) && balanced(class_balance(test, 2))) {
      out.train = std::move(train);
      out.dev = std::move(dev);
      out.test = std::move(test);
      return out;
    }
  }
  throw DataError("gen_synthetic: no class-balanced split after 100 attempts");
}

double Balance::fraction(std::size_t label) const {
  return n == 0 || label >= counts.size() ? 0.0 : static_cast<double>(counts[label]) / static_cast<double>(n);
}

Balance class_balance(const Dataset& data, std::size_t n_classes) {
  Balance b;
  b.n = data.size();
  b.counts.assign(n_classes, 0);
  for (const auto& e : data)
    if (e.label < n_classes) ++b.counts[e.label];
  return b;
}

bool balanced(const Balance& b, double lo, double hi) {
  if (b.n == 0) return false;
  for (std::size_t c = 0; c < b.counts.size(); ++c) {
    const double f = b.fraction(c);
    if (f < lo || f > hi) return false;
  }
  return true;
}

std::string transform_name(Transform t) {
  switch (t) {
    case Transform::kSwapSyn: return "SwapSyn";
    case Transform::kSwapAnt: return "SwapAnt";
    case Transform::kInsertTok: return "InsertTok";
    case Transform::kDeleteTok: return "DeleteTok";
  }
  return "?";
}

Transform parse_transform(const std::string& name) {
  const std::string n = lower(name);
  if (n == "swapsyn") return Transform::kSwapSyn;
  if (n == "swapant") return Transform::kSwapAnt;
  if (n == "inserttok") return Transform::kInsertTok;
  if (n == "deletetok") return Transform::kDeleteTok;
  throw ConfigError("transform",
                    "unknown transform \"" + name + "\" (expected SwapSyn, SwapAnt, InsertTok or DeleteTok)");
}

PerturbResult perturb(const Dataset& data, Transform transform, const Lexicon& lexicon, const Vocab& vocab,
                      std::uint64_t seed, std::size_t negative_label) {
  Rng rng(seed);
  PerturbResult out;
  for (const auto& e : data) {
    const Sentence s1 = tokens_of(e.raw_s1, e.s1, vocab);
    Sentence s2 = tokens_of(e.raw_s2, e.s2, vocab);
    std::size_t label = e.label;

    // (position, replacement options) for the swap transforms.
    std::vector<std::pair<std::size_t, std::vector<std::string>>> swaps;
    std::vector<std::size_t> positions;
    switch (transform) {
      case Transform::kSwapSyn:
        for (std::size_t i = 0; i < s2.size(); ++i) {
          auto c = lexicon.synonyms_of(s2[i]);
          if (!c.empty()) swaps.emplace_back(i, std::move(c));
        }
        break;
      case Transform::kSwapAnt:
        for (std::size_t i = 0; i < s2.size(); ++i) {
          auto a = lexicon.antonym_of(s2[i]);
          if (a && !contains(s1, *a)) swaps.emplace_back(i, std::vector<std::string>{*a});
        }
        break;
      case Transform::kInsertTok:
        if (!lexicon.fillers.empty())
          for (std::size_t i = 0; i <= s2.size(); ++i) positions.push_back(i);
        break;
      case Transform::kDeleteTok:
        if (s2.size() > 1)
          for (std::size_t i = 0; i < s2.size(); ++i)
            if (!lexicon.is_content(s2[i])) positions.push_back(i);
        break;
    }

    if (!swaps.empty()) {
      const auto& [i, options] = swaps[rng.index(swaps.size())];
      s2[i] = options[rng.index(options.size())];
      if (transform == Transform::kSwapAnt) label = negative_label;
    } else if (!positions.empty()) {
      const std::size_t i = positions[rng.index(positions.size())];
      if (transform == Transform::kInsertTok) {
        s2.insert(s2.begin() + static_cast<std::ptrdiff_t>(i), lexicon.fillers[rng.index(lexicon.fillers.size())]);
      } else {
        s2.erase(s2.begin() + static_cast<std::ptrdiff_t>(i));
      }
    } else {
      ++out.dropped;
      continue;
    }
    Example p = e;
    p.raw_s1 = detokenize(s1);
    p.raw_s2 = detokenize(s2);
    p.s2 = vocab.encode(s2);
    p.label = label;
    out.data.push_back(std::move(p));
  }
  if (out.data.empty() && !data.empty()) {
    throw DataError("perturb: no example has a position eligible for " + transform_name(transform));
  }
  return out;
}

}  // namespace dpm
