#include "dpm/dual_attention.hpp"

#include <cmath>

#include "dpm/ops.hpp"

namespace dpm {

SubtractAttnParams SubtractAttnParams::create(ParameterStore& store, Rng& rng, const std::string& name,
                                              std::size_t dim, std::size_t attn_dim) {
  SubtractAttnParams p;
  p.w_m = store.create(name + ".w_m", {attn_dim, dim});
  init_glorot_uniform(p.w_m, rng);
  p.w_s = store.create(name + ".w_s", {attn_dim});
  // Treated as a [1 x d_a] projection for initialization.
  const double limit = std::sqrt(6.0 / (static_cast<double>(attn_dim) + 1.0));
  for (double& x : p.w_s.mutable_values()) x = rng.uniform(-limit, limit);
  return p;
}

AttentionResult dot_attention(const Tensor& q, const Tensor& v, const Mask& key_mask, const Mask& query_mask) {
  const Tensor scores = matmul(v, transpose(q));
  const Tensor weights = mask_rows(softmax(scores, 1, &key_mask), query_mask);
  return {matmul(weights, q), weights};
}

AttentionResult subtract_attention(const Tensor& values, const Tensor& q, const Tensor& v,
                                   const SubtractAttnParams& params, const Mask& key_mask,
                                   const Mask& query_mask) {
  const std::size_t n_keys = q.dim(0);
  const std::size_t n_queries = v.dim(0);
  const Tensor diffs = pairwise_diff(q, v);  // row t * n_keys + j = q_j - v_t
  const Tensor hidden = tanh(linear(diffs, params.w_m));
  const Tensor w_s_row = reshape(params.w_s, {1, params.w_s.numel()});
  const Tensor scores = reshape(linear(hidden, w_s_row), {n_queries, n_keys});
  const Tensor weights = mask_rows(softmax(scores, 1, &key_mask), query_mask);
  return {matmul(weights, values), weights};
}

}  // namespace dpm
