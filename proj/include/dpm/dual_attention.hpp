#pragma once

#include "dpm/layers.hpp"
#include "dpm/pair_encoder.hpp"

namespace dpm {

// Output rows plus the attention matrix that produced them. Row t of
// `weights` distributes query position t over key positions; rows of
// invalid query positions are all zero.
struct AttentionResult {
  Tensor output;   // [N x d]
  Tensor weights;  // [N x N]
};

struct DualAttnOutput {
  Tensor qd;  // affinity path
  Tensor qs;  // difference path
  Tensor ad;
  Tensor as;
};

struct SubtractAttnParams {
  Tensor w_m;  // [d_a x d]
  Tensor w_s;  // [d_a], reduces tanh(W_m(q_j - v_t)) to a scalar score

  static SubtractAttnParams create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim,
                                   std::size_t attn_dim);
};

enum class DifferenceSource { kP, kQ };

// Affinity path: score(t, j) = <q_j, v_t>, weights softmax over valid keys j,
// output_t = sum_j a_j q_j.
AttentionResult dot_attention(const Tensor& q, const Tensor& v, const Mask& key_mask, const Mask& query_mask);

// Difference path: score(t, j) = <w_s, tanh(W_m (q_j - v_t))>, weights
// softmax over valid keys j, output_t = sum_j a_j values_j.
AttentionResult subtract_attention(const Tensor& values, const Tensor& q, const Tensor& v,
                                   const SubtractAttnParams& params, const Mask& key_mask,
                                   const Mask& query_mask);

}  // namespace dpm
