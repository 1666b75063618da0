#include "doctest.h"
#include "dpm/errors.hpp"
#include "dpm/ops.hpp"
#include "dpm/pair_encoder.hpp"
#include "helpers.hpp"

using namespace dpm;

namespace {

struct Fixture {
  static constexpr std::size_t kLen = 5, kDim = 8, kVocab = 20;
  ParameterStore store;
  Rng rng{31};
  TransformerEncoder encoder;
  Linear fusion;

  explicit Fixture(std::size_t layers) {
    encoder = TransformerEncoder::create(store, rng, "enc", kVocab, joint_positions(kLen), kDim, 2, layers);
    fusion = Linear::create(store, rng, "fusion", 2 * kDim, kDim);
  }

  // token + position + segment embedding row, the zero-layer encoder output.
  double embed(std::size_t id, std::size_t pos, std::size_t seg, std::size_t k) const {
    const Embedding& e = encoder.embedding;
    return e.token.at(id, k) + e.position.at(pos, k) + e.segment.at(seg, k);
  }
};

}  // namespace

TEST_CASE("interaction mode lays out [CLS] s1 [SEP] s2 [SEP] with segments 0 then 1") {
  Fixture f(0);
  const TokenIds s1{5, 6, 7}, s2{8, 9};
  const RawPair r = encode_interaction(f.encoder, s1, s2, Fixture::kLen);
  CHECK(r.q.shape() == Shape{Fixture::kLen, Fixture::kDim});
  CHECK(r.mask_q == Mask{true, true, true, false, false});
  CHECK(r.mask_p == Mask{true, true, false, false, false});
  for (std::size_t k = 0; k < Fixture::kDim; ++k) {
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(r.q.at(i, k) == doctest::Approx(f.embed(s1[i], 1 + i, 0, k)).epsilon(1e-14));
    for (std::size_t i = 0; i < s2.size(); ++i) CHECK(r.p.at(i, k) == doctest::Approx(f.embed(s2[i], 5 + i, 1, k)).epsilon(1e-14));
    for (std::size_t i = s1.size(); i < Fixture::kLen; ++i) CHECK(r.q.at(i, k) == 0.0);
    for (std::size_t i = s2.size(); i < Fixture::kLen; ++i) CHECK(r.p.at(i, k) == 0.0);
  }
}

TEST_CASE("representation mode encodes each sentence on its own") {
  Fixture f(0);
  const TokenIds s1{5, 6, 7}, s2{8, 9};
  const RawPair r = encode_representation(f.encoder, s1, s2, Fixture::kLen);
  for (std::size_t k = 0; k < Fixture::kDim; ++k) {
    for (std::size_t i = 0; i < s2.size(); ++i) CHECK(r.p.at(i, k) == doctest::Approx(f.embed(s2[i], 1 + i, 0, k)).epsilon(1e-14));
  }
  const RawPair joint = encode_interaction(f.encoder, s1, s2, Fixture::kLen);
  CHECK(testing::bit_equal(r.q.values(), joint.q.values()));
}

TEST_CASE("representation mode is siamese: Q does not depend on s2") {
  Fixture f(2);
  const RawPair a = encode_representation(f.encoder, {5, 6, 7}, {8, 9}, Fixture::kLen);
  const RawPair b = encode_representation(f.encoder, {5, 6, 7}, {10, 11, 12, 13}, Fixture::kLen);
  CHECK(testing::bit_equal(a.q.values(), b.q.values()));
  const RawPair c = encode_interaction(f.encoder, {5, 6, 7}, {8, 9}, Fixture::kLen);
  const RawPair d = encode_interaction(f.encoder, {5, 6, 7}, {10, 11, 12, 13}, Fixture::kLen);
  CHECK_FALSE(testing::bit_equal(c.q.values(), d.q.values()));
}

TEST_CASE("V is the masked linear fusion of aligned Q and P rows") {
  Fixture f(1);
  const EncodedPair e = encode_pair(EncoderMode::kInteraction, f.encoder, f.fusion, {4, 5, 6, 7}, {8, 9}, Fixture::kLen);
  CHECK(e.mask_v == Mask{true, true, false, false, false});
  CHECK(e.valid_v() == 2);
  CHECK(e.length() == Fixture::kLen);
  const Tensor ref = f.fusion.forward(concat({e.q, e.p}, 1));
  for (std::size_t t = 0; t < Fixture::kLen; ++t)
    for (std::size_t k = 0; k < Fixture::kDim; ++k) CHECK(e.v.at(t, k) == (e.mask_v[t] ? ref.at(t, k) : 0.0));
}

TEST_CASE("long sentences are clipped to the pad length") {
  Fixture f(1);
  const TokenIds longer{4, 5, 6, 7, 8, 9, 10, 11};
  CHECK(clip_sentence(longer, 3) == TokenIds{4, 5, 6});
  CHECK(clip_sentence({4, 5}, 3) == TokenIds{4, 5});
  const EncodedPair e = encode_pair(EncoderMode::kInteraction, f.encoder, f.fusion, longer, longer, Fixture::kLen);
  CHECK(e.valid_v() == Fixture::kLen);
}

TEST_CASE("content at padded positions never reaches Q or P") {
  Fixture f(2);
  const TokenIds s1{4, 5, 6}, s2{7, 8};
  const RawPair ref = encode_interaction(f.encoder, s1, s2, Fixture::kLen);
  // Same layout as encode_interaction, but with random ids in the padding.
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t total = joint_positions(Fixture::kLen);
    TokenIds ids(total);
    std::vector<std::size_t> segs(total, 0);
    for (auto& id : ids) id = rng.range(0, Fixture::kVocab - 1);
    ids[0] = special::kCls;
    std::copy(s1.begin(), s1.end(), ids.begin() + 1);
    ids[4] = special::kSep;
    std::copy(s2.begin(), s2.end(), ids.begin() + 5);
    ids[7] = special::kSep;
    for (std::size_t i = 5; i <= 7; ++i) segs[i] = 1;
    for (std::size_t i = 8; i < total; ++i) segs[i] = rng.range(0, 1);
    Mask mask(total, false);
    for (std::size_t i = 0; i < 8; ++i) mask[i] = true;
    const Tensor out = f.encoder.forward(ids, segs, mask);
    CHECK(testing::bit_equal(slice(out, 0, 1, 4).values(), slice(ref.q, 0, 0, 3).values()));
    CHECK(testing::bit_equal(slice(out, 0, 5, 7).values(), slice(ref.p, 0, 0, 2).values()));
  }
}

TEST_CASE("token ids outside the vocabulary are data errors") {
  Fixture f(1);
  CHECK_THROWS_AS(encode_pair(EncoderMode::kInteraction, f.encoder, f.fusion, {4, 99}, {5}, Fixture::kLen), DataError);
}

TEST_CASE("and_masks requires equal lengths") {
  CHECK(and_masks({true, true, false}, {true, false, true}) == Mask{true, false, false});
  CHECK_THROWS_AS(and_masks({true}, {true, false}), DimensionError);
}
