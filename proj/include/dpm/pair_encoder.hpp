#pragma once

#include <cstddef>

#include "dpm/layers.hpp"
#include "dpm/vocab.hpp"

namespace dpm {

enum class EncoderMode {
  kInteraction,     // one joint pass over [CLS] s1 [SEP] s2 [SEP]
  kRepresentation,  // shared encoder applied to [CLS] s [SEP] per sentence
};

// Contextual rows of both sentences, each re-padded to `length` rows with
// zeros past the sentence end.
struct RawPair {
  Tensor q;  // [N x d]
  Tensor p;  // [N x d]
  Mask mask_q;
  Mask mask_p;
};

struct EncodedPair {
  Tensor q;  // [N x d]
  Tensor p;  // [N x d]
  Tensor v;  // [N x d], linear fusion of [q_t ; p_t]
  Mask mask_q;
  Mask mask_p;
  Mask mask_v;  // mask_q AND mask_p

  std::size_t length() const { return mask_q.size(); }
  std::size_t valid_v() const;
};

// Truncates to `length` tokens, warning on stderr the first few times.
TokenIds clip_sentence(const TokenIds& ids, std::size_t length);

// Joint sequence length the positional table must cover for pad length N.
constexpr std::size_t joint_positions(std::size_t length) { return 2 * length + 3; }

RawPair encode_representation(const TransformerEncoder& encoder, const TokenIds& s1, const TokenIds& s2,
                              std::size_t length);
RawPair encode_interaction(const TransformerEncoder& encoder, const TokenIds& s1, const TokenIds& s2,
                           std::size_t length);

Mask and_masks(const Mask& a, const Mask& b);

Tensor fuse_v(const Tensor& q, const Tensor& p, const Linear& fusion, const Mask& mask_v);

EncodedPair encode_pair(EncoderMode mode, const TransformerEncoder& encoder, const Linear& fusion,
                        const TokenIds& s1, const TokenIds& s2, std::size_t length);

}  // namespace dpm
