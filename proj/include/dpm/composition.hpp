#pragma once

#include "dpm/layers.hpp"

namespace dpm {

// Gated fusion of one attention path with V. The gate is a scalar per
// position (w_g is [1 x 2d]) unless built with vector_gate, in which case
// w_g is [2d x 2d] and gates every coordinate.
struct InternalAggParams {
  Tensor w_g;
  Linear transform;  // [d x 2d] with bias

  static InternalAggParams create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim,
                                  bool vector_gate);
  bool vector_gate() const { return w_g.dim(0) != 1; }
};

struct ExternalAggParams {
  Tensor w_1;    // [d_a x d]
  Tensor w_2;    // [d_a x d]
  Tensor score;  // [d_a], the v in v^T tanh(W_1 h + W_2 v_t)

  static ExternalAggParams create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim,
                                  std::size_t attn_dim);
};

struct InternalAggResult {
  Tensor h;     // [N x d]
  Tensor gate;  // [N x 1] or [N x 2d]; undefined when the gate is disabled
};

// h_t = tanh(W_c (g * [attended_t ; v_t]) + b_c) with g = sigmoid(W_g x).
// With use_gate == false the gate is dropped: h_t = tanh(W_c x + b_c).
InternalAggResult internal_aggregate(const Tensor& attended, const Tensor& v, const InternalAggParams& params,
                                     const Mask& mask, bool use_gate = true);

struct ExternalAggResult {
  Tensor x;        // [N x d]
  Tensor weights;  // [N x 2], columns (a_d, a_s); zero rows at invalid positions
};

// Per position t: s_i = <score, tanh(W_1 h_t^i + W_2 v_t)> for i in {d, s},
// (a_d, a_s) = softmax(s_d, s_s), x_t = a_d h_t^d + a_s h_t^s.
ExternalAggResult external_aggregate(const Tensor& hd, const Tensor& hs, const Tensor& v,
                                     const ExternalAggParams& params, const Mask& mask);

// x_t = w[t,0] h_t^d + w[t,1] h_t^s for caller-supplied weights [N x 2].
ExternalAggResult combine_paths(const Tensor& hd, const Tensor& hs, const Tensor& weights, const Mask& mask);

// Constant [N x 2] weights with every row equal to (a_d, a_s).
Tensor fixed_path_weights(std::size_t rows, double a_d, double a_s);

}  // namespace dpm
