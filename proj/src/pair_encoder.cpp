#include "dpm/pair_encoder.hpp"

#include <atomic>
#include <iostream>

#include "dpm/errors.hpp"
#include "dpm/ops.hpp"

namespace dpm {
namespace {

std::atomic<int> g_truncation_warnings{0};
constexpr int kMaxTruncationWarnings = 3;

Mask prefix_mask(std::size_t valid, std::size_t length) {
  Mask m(length, false);
  for (std::size_t i = 0; i < valid && i < length; ++i) m[i] = true;
  return m;
}

// Rows [begin, begin + count) of `x`, zero-padded to `length` rows.
Tensor take_span(const Tensor& x, std::size_t begin, std::size_t count, std::size_t length) {
  return pad_rows(slice(x, 0, begin, begin + count), length);
}

}  // namespace

std::size_t EncodedPair::valid_v() const {
  std::size_t n = 0;
  for (bool b : mask_v) n += b ? 1 : 0;
  return n;
}

TokenIds clip_sentence(const TokenIds& ids, std::size_t length) {
  if (ids.size() <= length) return ids;
  if (g_truncation_warnings.fetch_add(1) < kMaxTruncationWarnings) {
    std::cerr << "warning: truncating sentence of " << ids.size() << " tokens to " << length << '\n';
  }
  return TokenIds(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(length));
}

RawPair encode_representation(const TransformerEncoder& encoder, const TokenIds& s1, const TokenIds& s2,
                              std::size_t length) {
  auto encode_one = [&](const TokenIds& raw, Tensor& rows, Mask& mask) {
    const TokenIds s = clip_sentence(raw, length);
    TokenIds ids(length + 2, special::kPad);
    ids[0] = special::kCls;
    std::copy(s.begin(), s.end(), ids.begin() + 1);
    ids[s.size() + 1] = special::kSep;
    const std::vector<std::size_t> segments(ids.size(), 0);
    const Tensor out = encoder.forward(ids, segments, prefix_mask(s.size() + 2, ids.size()));
    rows = take_span(out, 1, s.size(), length);
    mask = prefix_mask(s.size(), length);
  };
  RawPair r;
  encode_one(s1, r.q, r.mask_q);
  encode_one(s2, r.p, r.mask_p);
  return r;
}

RawPair encode_interaction(const TransformerEncoder& encoder, const TokenIds& s1, const TokenIds& s2,
                           std::size_t length) {
  const TokenIds a = clip_sentence(s1, length);
  const TokenIds b = clip_sentence(s2, length);
  const std::size_t total = joint_positions(length);
  TokenIds ids(total, special::kPad);
  std::vector<std::size_t> segments(total, 0);
  ids[0] = special::kCls;
  std::copy(a.begin(), a.end(), ids.begin() + 1);
  ids[a.size() + 1] = special::kSep;
  const std::size_t p_begin = a.size() + 2;
  std::copy(b.begin(), b.end(), ids.begin() + static_cast<std::ptrdiff_t>(p_begin));
  ids[p_begin + b.size()] = special::kSep;
  for (std::size_t i = p_begin; i <= p_begin + b.size(); ++i) segments[i] = 1;

  const Tensor out = encoder.forward(ids, segments, prefix_mask(a.size() + b.size() + 3, total));
  RawPair r;
  r.q = take_span(out, 1, a.size(), length);
  r.p = take_span(out, p_begin, b.size(), length);
  r.mask_q = prefix_mask(a.size(), length);
  r.mask_p = prefix_mask(b.size(), length);
  return r;
}

Mask and_masks(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw DimensionError("mask lengths differ");
  Mask m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] && b[i];
  return m;
}

Tensor fuse_v(const Tensor& q, const Tensor& p, const Linear& fusion, const Mask& mask_v) {
  return mask_rows(fusion.forward(concat({q, p}, 1)), mask_v);
}

EncodedPair encode_pair(EncoderMode mode, const TransformerEncoder& encoder, const Linear& fusion,
                        const TokenIds& s1, const TokenIds& s2, std::size_t length) {
  RawPair raw = mode == EncoderMode::kInteraction ? encode_interaction(encoder, s1, s2, length)
                                                  : encode_representation(encoder, s1, s2, length);
  EncodedPair e;
  e.mask_q = std::move(raw.mask_q);
  e.mask_p = std::move(raw.mask_p);
  e.mask_v = and_masks(e.mask_q, e.mask_p);
  e.q = std::move(raw.q);
  e.p = std::move(raw.p);
  e.v = fuse_v(e.q, e.p, fusion, e.mask_v);
  return e;
}

}  // namespace dpm
