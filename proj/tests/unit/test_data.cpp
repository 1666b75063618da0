#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dpm/data.hpp"
#include "dpm/errors.hpp"

using namespace dpm;
using Tokens = std::vector<std::string>;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& haystack, const std::string& needle) { return haystack.find(needle) != std::string::npos; }

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "dpm_test_data";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

Tokens words(const Example& e, const Vocab& vocab, bool second) {
  Tokens out;
  for (std::size_t id : second ? e.s2 : e.s1) out.push_back(vocab.token(id));
  return out;
}

Lexicon dog_lexicon() {
  Lexicon lex;
  lex.synonyms = {{"big", "large"}, {"small", "little"}};
  lex.antonyms = {{"big", "small"}, {"large", "little"}};
  lex.fillers = {"very"};
  return lex;
}

Example raw_example(const Vocab& vocab, const std::string& s1, const std::string& s2, std::size_t label) {
  return to_example(RawExample{s1, s2, label, 1}, vocab);
}

}  // namespace

TEST_CASE("tokenize lowercases, splits and strips punctuation") {
  CHECK(tokenize("The cat sat.") == Tokens{"the", "cat", "sat"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("Don't   stop") == Tokens{"don't", "stop"});
  CHECK(tokenize("  ... hello, (world)! ") == Tokens{"hello", "world"});
}

TEST_CASE("detokenize after tokenize only normalizes case, punctuation and spacing") {
  CHECK(detokenize(tokenize("  The  CAT sat. ")) == "the cat sat");
  for (const std::string s : {"a b c", "x", "don't stop"}) CHECK(detokenize(tokenize(s)) == s);
}

TEST_CASE("vocab reserves the special ids and maps unknown tokens to UNK") {
  Vocab v;
  CHECK(v.size() == special::kCount);
  CHECK(v.add("dog") == special::kCount);
  CHECK(v.add("dog") == special::kCount);
  CHECK(v.id("cat") == special::kUnk);
  CHECK(Vocab::from_tokens(v.tokens()) == v);
}

TEST_CASE("JSONL lines become id-mapped examples in file order") {
  const auto raw = parse_jsonl("{\"s1\":\"a b\",\"s2\":\"a b\",\"label\":1}\n\n{\"s1\":\"c\",\"s2\":\"d e\",\"label\":0}\n", 2);
  REQUIRE(raw.size() == 2);
  CHECK(raw[1].line == 3);
  const Vocab vocab = build_vocab(raw);
  const Dataset data = to_dataset(raw, vocab);
  CHECK(data[0].s1 == data[0].s2);
  CHECK(data[0].label == 1);
  CHECK(words(data[1], vocab, true) == Tokens{"d", "e"});
  CHECK(parse_jsonl(to_jsonl(data), 2).size() == 2);
}

TEST_CASE("an empty file is an empty dataset") {
  const auto path = temp_file("empty.jsonl", "");
  CHECK(load_jsonl(path, Vocab(), 2).empty());
}

TEST_CASE("bad JSONL lines are rejected with their line number") {
  const std::string ok = "{\"s1\":\"a\",\"s2\":\"b\",\"label\":0}\n";
  auto err = [&](const std::string& bad) { return error_of([&] { parse_jsonl(ok + bad, 2); }); };
  CHECK(contains(err("{\"s1\":\"a\",\"s2\":\"b\",\"label\":5}"), "line 2"));
  CHECK(contains(err("{\"s1\":\"a\",\"s2\":\"b\",\"label\":5}"), "label 5"));
  CHECK(contains(err("{not json"), "line 2: malformed JSON"));
  CHECK(contains(err("{\"s1\":\"a\",\"label\":0}"), "missing field \"s2\""));
  CHECK(contains(err("{\"s1\":\"a\",\"s2\":\"b\"}"), "missing field \"label\""));
  CHECK(contains(err("{\"s1\":3,\"s2\":\"b\",\"label\":0}"), "\"s1\" must be a string"));
  CHECK(contains(err("{\"s1\":\"...\",\"s2\":\"b\",\"label\":0}"), "\"s1\" has no tokens"));
  CHECK(contains(err("{\"s1\":\"a\",\"s2\":\"b\",\"label\":-1}"), "non-negative integer"));
  CHECK(contains(err("{\"s1\":\"a\",\"s2\":\"b\",\"label\":0.5}"), "non-negative integer"));
  CHECK(contains(err("[1, 2]"), "expected a JSON object"));
  CHECK(contains(error_of([] { read_jsonl("/nonexistent/x.jsonl", 2); }), "cannot read"));
}

TEST_CASE("lexicon validation and lookups") {
  const Lexicon lex = dog_lexicon();
  CHECK_NOTHROW(lex.validate());
  CHECK(lex.synonyms_of("big") == Tokens{"large"});
  CHECK(lex.antonym_of("little") == std::optional<std::string>("large"));
  CHECK_FALSE(lex.antonym_of("dog").has_value());
  CHECK(lex.is_content("small"));
  CHECK_FALSE(lex.is_content("very"));
  CHECK(lexicon_from_json(to_json(lex)) == lex);

  Lexicon reflexive = lex;
  reflexive.antonyms.push_back({"dog", "dog"});
  CHECK_THROWS_AS(reflexive.validate(), DataError);
  Lexicon two = lex;
  two.antonyms.push_back({"big", "tiny"});
  CHECK_THROWS_AS(two.validate(), DataError);
  Lexicon clash = lex;
  clash.synonyms.push_back({"big", "small"});
  CHECK_THROWS_AS(clash.validate(), DataError);
  CHECK_THROWS_AS(lexicon_from_json({{"synonyms", {{"a"}}}, {"antonyms", {{"a", "b", "c"}}}}), DataError);
}

TEST_CASE("the synthetic lexicon pairs triples as antonyms and leaves fillers") {
  const Lexicon lex = synthetic_lexicon(120);
  CHECK(lex.synonyms.size() == 32);
  CHECK(lex.antonyms.size() == 48);
  CHECK(lex.fillers.size() == 24);
  CHECK(lex.antonym_of("w0") == std::optional<std::string>("w3"));
  CHECK(lex.synonyms_of("w0") == Tokens{"w1", "w2"});
  CHECK_NOTHROW(lex.validate());
}

TEST_CASE("SWAP_ANT generation has the documented shape") {
  const SynthData d = gen_synthetic({});
  CHECK(d.train.size() == 1600);
  CHECK(d.dev.size() == 200);
  CHECK(d.test.size() == 200);
  CHECK(d.vocab.size() == 124);
  std::set<TokenIds> firsts;
  for (const Dataset* split : {&d.train, &d.dev, &d.test}) {
    CHECK(balanced(class_balance(*split, 2)));
    for (const Example& e : *split) {
      CHECK(firsts.insert(e.s1).second);
      REQUIRE(e.s1.size() == e.s2.size());
      CHECK((e.s1.size() >= 6 && e.s1.size() <= 10));
      std::size_t diffs = 0, at = 0;
      for (std::size_t i = 0; i < e.s1.size(); ++i)
        if (e.s1[i] != e.s2[i]) ++diffs, at = i;
      CHECK(diffs == 1);
      const std::string a = d.vocab.token(e.s1[at]), b = d.vocab.token(e.s2[at]);
      if (e.label == 0) {
        CHECK(d.lexicon.antonym_of(a) == std::optional<std::string>(b));
      } else {
        const auto syn = d.lexicon.synonyms_of(a);
        CHECK(std::find(syn.begin(), syn.end(), b) != syn.end());
      }
    }
  }
}

TEST_CASE("synthetic generation is a pure function of its settings") {
  for (SynthTask task : {SynthTask::kOverlap, SynthTask::kSwapAnt, SynthTask::kParaphrase}) {
    SynthTaskSpec spec;
    spec.task = task;
    spec.n_examples = 300;
    const SynthData a = gen_synthetic(spec), b = gen_synthetic(spec);
    CHECK(to_jsonl(a.train) == to_jsonl(b.train));
    CHECK(to_jsonl(a.test) == to_jsonl(b.test));
    spec.seed = 8;
    CHECK(to_jsonl(gen_synthetic(spec).train) != to_jsonl(a.train));
  }
}

TEST_CASE("OVERLAP positives are permutations and negatives are not") {
  SynthTaskSpec spec;
  spec.task = SynthTask::kOverlap;
  spec.n_examples = 400;
  const SynthData d = gen_synthetic(spec);
  for (const Example& e : d.train) {
    TokenIds a = e.s1, b = e.s2;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK((a == b) == (e.label == 1));
  }
}

TEST_CASE("PARAPHRASE negatives contain an antonym substitution and positives only synonyms") {
  SynthTaskSpec spec;
  spec.task = SynthTask::kParaphrase;
  spec.n_examples = 400;
  const SynthData d = gen_synthetic(spec);
  for (const Example& e : d.train) {
    REQUIRE(e.s1.size() == e.s2.size());
    std::size_t ants = 0, syns = 0;
    for (std::size_t i = 0; i < e.s1.size(); ++i) {
      if (e.s1[i] == e.s2[i]) continue;
      const std::string a = d.vocab.token(e.s1[i]), b = d.vocab.token(e.s2[i]);
      const auto syn = d.lexicon.synonyms_of(a);
      if (d.lexicon.antonym_of(a) == std::optional<std::string>(b)) ++ants;
      else if (std::find(syn.begin(), syn.end(), b) != syn.end()) ++syns;
    }
    if (e.label == 0) {
      CHECK(ants == 1);
      CHECK(syns <= 2);
    } else {
      CHECK(ants == 0);
      CHECK((syns >= 1 && syns <= 3));
    }
  }
}

TEST_CASE("bad synthetic specs are config errors") {
  SynthTaskSpec spec;
  spec.min_len = 12;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(parse_synth_task("SWAP"), ConfigError);
  CHECK(parse_synth_task("swap_ant") == SynthTask::kSwapAnt);
}

TEST_CASE("SwapSyn replaces one token with a synonym and keeps the label") {
  const Lexicon lex = dog_lexicon();
  const Vocab vocab = build_vocab({}, &lex);
  Vocab v = vocab;
  v.add("a");
  v.add("dog");
  const PerturbResult r = perturb({raw_example(v, "a big dog", "a big dog", 1)}, Transform::kSwapSyn, lex, v, 1);
  REQUIRE(r.data.size() == 1);
  CHECK(r.data[0].raw_s2 == "a large dog");
  CHECK(words(r.data[0], v, true) == Tokens{"a", "large", "dog"});
  CHECK(r.data[0].label == 1);
}

TEST_CASE("SwapAnt flips to the negative label") {
  const Lexicon lex = dog_lexicon();
  Vocab v = build_vocab({}, &lex);
  v.add("a");
  v.add("dog");
  const PerturbResult r = perturb({raw_example(v, "a big dog", "a big dog", 1)}, Transform::kSwapAnt, lex, v, 1);
  REQUIRE(r.data.size() == 1);
  CHECK(r.data[0].raw_s2 == "a small dog");
  CHECK(r.data[0].label == 0);
  const PerturbResult three = perturb({raw_example(v, "a big dog", "a big dog", 0)}, Transform::kSwapAnt, lex, v, 1, 2);
  CHECK(three.data[0].label == 2);
}

TEST_CASE("perturbation drops ineligible examples and conserves the count") {
  const Lexicon lex = dog_lexicon();
  Vocab v = build_vocab({}, &lex);
  for (const char* t : {"a", "dog", "cat", "ran"}) v.add(t);
  const Dataset data{raw_example(v, "a big dog", "a big dog", 1), raw_example(v, "a cat", "a cat", 1),
                     raw_example(v, "dog ran", "ran", 0)};
  for (Transform t : {Transform::kSwapSyn, Transform::kSwapAnt, Transform::kInsertTok, Transform::kDeleteTok}) {
    const PerturbResult r = perturb(data, t, lex, v, 3);
    CHECK(r.data.size() + r.dropped == data.size());
  }
  CHECK(perturb(data, Transform::kSwapSyn, lex, v, 3).dropped == 2);
  const PerturbResult del = perturb(data, Transform::kDeleteTok, lex, v, 3);
  CHECK(del.dropped == 1);
  CHECK(std::find(del.data[0].s2.begin(), del.data[0].s2.end(), v.id("big")) != del.data[0].s2.end());
  const PerturbResult ins = perturb(data, Transform::kInsertTok, lex, v, 3);
  CHECK(ins.dropped == 0);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(ins.data[i].s2.size() == data[i].s2.size() + 1);
  CHECK_THROWS_AS(perturb({data[1]}, Transform::kSwapAnt, lex, v, 3), DataError);
}

TEST_CASE("perturbation is deterministic given the seed") {
  const SynthData d = gen_synthetic({});
  const PerturbResult a = perturb(d.test, Transform::kSwapSyn, d.lexicon, d.vocab, 9);
  const PerturbResult b = perturb(d.test, Transform::kSwapSyn, d.lexicon, d.vocab, 9);
  CHECK(to_jsonl(a.data) == to_jsonl(b.data));
  REQUIRE(a.dropped == 0);
  for (const Example& e : a.data) CHECK(e.label == d.test[&e - a.data.data()].label);
}
