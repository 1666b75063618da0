#include "dpm/composition.hpp"

#include <cmath>

#include "dpm/ops.hpp"

namespace dpm {

InternalAggParams InternalAggParams::create(ParameterStore& store, Rng& rng, const std::string& name,
                                            std::size_t dim, bool vector_gate) {
  InternalAggParams p;
  p.w_g = store.create(name + ".gate", {vector_gate ? 2 * dim : 1, 2 * dim});
  init_glorot_uniform(p.w_g, rng);
  p.transform = Linear::create(store, rng, name + ".transform", 2 * dim, dim);
  return p;
}

ExternalAggParams ExternalAggParams::create(ParameterStore& store, Rng& rng, const std::string& name,
                                            std::size_t dim, std::size_t attn_dim) {
  ExternalAggParams p;
  p.w_1 = store.create(name + ".w_1", {attn_dim, dim});
  init_glorot_uniform(p.w_1, rng);
  p.w_2 = store.create(name + ".w_2", {attn_dim, dim});
  init_glorot_uniform(p.w_2, rng);
  p.score = store.create(name + ".score", {attn_dim});
  const double limit = std::sqrt(6.0 / (static_cast<double>(attn_dim) + 1.0));
  for (double& x : p.score.mutable_values()) x = rng.uniform(-limit, limit);
  return p;
}

InternalAggResult internal_aggregate(const Tensor& attended, const Tensor& v, const InternalAggParams& params,
                                     const Mask& mask, bool use_gate) {
  const Tensor x = concat({attended, v}, 1);
  InternalAggResult r;
  Tensor gated = x;
  if (use_gate) {
    r.gate = sigmoid(linear(x, params.w_g));
    gated = params.vector_gate() ? mul(x, r.gate) : row_scale(x, r.gate);
  }
  r.h = mask_rows(tanh(params.transform.forward(gated)), mask);
  return r;
}

ExternalAggResult combine_paths(const Tensor& hd, const Tensor& hs, const Tensor& weights, const Mask& mask) {
  const Tensor mixed = add(row_scale(hd, slice(weights, 1, 0, 1)), row_scale(hs, slice(weights, 1, 1, 2)));
  return {mask_rows(mixed, mask), weights};
}

ExternalAggResult external_aggregate(const Tensor& hd, const Tensor& hs, const Tensor& v,
                                     const ExternalAggParams& params, const Mask& mask) {
  const Tensor context = linear(v, params.w_2);
  const Tensor score_row = reshape(params.score, {1, params.score.numel()});
  auto path_score = [&](const Tensor& h) { return linear(tanh(add(linear(h, params.w_1), context)), score_row); };
  const Tensor scores = concat({path_score(hd), path_score(hs)}, 1);
  const Tensor weights = mask_rows(softmax(scores, 1), mask);
  return combine_paths(hd, hs, weights, mask);
}

Tensor fixed_path_weights(std::size_t rows, double a_d, double a_s) {
  std::vector<double> w(rows * 2);
  for (std::size_t r = 0; r < rows; ++r) {
    w[2 * r] = a_d;
    w[2 * r + 1] = a_s;
  }
  return Tensor({rows, 2}, std::move(w));
}

}  // namespace dpm
