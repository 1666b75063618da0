#include <cmath>

#include "doctest.h"
#include "dpm/dual_attention.hpp"
#include "dpm/errors.hpp"
#include "dpm/ops.hpp"
#include "helpers.hpp"

using namespace dpm;
using testing::random_tensor;

namespace {

SubtractAttnParams random_params(Rng& rng, std::size_t attn_dim, std::size_t dim, bool trainable = false) {
  SubtractAttnParams p;
  p.w_m = trainable ? testing::param(rng, {attn_dim, dim}) : random_tensor(rng, {attn_dim, dim});
  p.w_s = trainable ? testing::param(rng, {attn_dim}) : random_tensor(rng, {attn_dim});
  return p;
}

void check_row_stochastic(const Tensor& weights, const Mask& keys, const Mask& queries) {
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  for (std::size_t t = 0; t < n; ++t) {
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double a = weights.at(t, j);
      CHECK(a >= 0.0);
      if (!keys[j] || !queries[t]) CHECK(a == 0.0);
      total += a;
    }
    CHECK(std::abs(total - (queries[t] ? 1.0 : 0.0)) <= 1e-12);
  }
}

// Coordinatewise bounds over the valid rows of `rows`.
void check_convex_hull(const Tensor& out, const Tensor& rows, const Mask& keys, const Mask& queries) {
  for (std::size_t t = 0; t < out.dim(0); ++t) {
    if (!queries[t]) continue;
    for (std::size_t k = 0; k < out.dim(1); ++k) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t j = 0; j < rows.dim(0); ++j)
        if (keys[j]) {
          lo = std::min(lo, rows.at(j, k));
          hi = std::max(hi, rows.at(j, k));
        }
      CHECK(out.at(t, k) >= lo - 1e-12);
      CHECK(out.at(t, k) <= hi + 1e-12);
    }
  }
}

std::function<Tensor()> weighted_sum(std::function<Tensor()> f, Rng& rng, Shape shape) {
  const Tensor w = random_tensor(rng, std::move(shape), 0.5, 1.5);
  return [f, w] { return sum_all(mul(f(), w)); };
}

}  // namespace

TEST_CASE("dot attention matches the scalar oracle on random 2x4 instances") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor q = random_tensor(rng, {2, 4}, -2, 2), v = random_tensor(rng, {2, 4}, -2, 2);
    const Mask keys = testing::random_mask(rng, 2), queries = testing::random_mask(rng, 2);
    const AttentionResult r = dot_attention(q, v, keys, queries);
    const auto ref = oracle::dot_attention(testing::to_mat(q), testing::to_mat(v), keys, queries);
    worst = std::max({worst, testing::max_abs_diff(r.output.values(), ref.out.v),
                      testing::max_abs_diff(r.weights.values(), ref.weights.v)});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("subtract attention matches the scalar oracle on random 2x4 instances") {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor p = random_tensor(rng, {2, 4}, -2, 2), q = random_tensor(rng, {2, 4}, -2, 2);
    const Tensor v = random_tensor(rng, {2, 4}, -2, 2);
    const SubtractAttnParams params = random_params(rng, trial % 2 == 0 ? 4 : 3, 4);
    const Mask keys = testing::random_mask(rng, 2), queries = testing::random_mask(rng, 2);
    const AttentionResult r = subtract_attention(p, q, v, params, keys, queries);
    const auto ref = oracle::subtract_attention(testing::to_mat(p), testing::to_mat(q), testing::to_mat(v),
                                                testing::to_mat(params.w_m), testing::to_vec(params.w_s), keys,
                                                queries);
    worst = std::max({worst, testing::max_abs_diff(r.output.values(), ref.out.v),
                      testing::max_abs_diff(r.weights.values(), ref.weights.v)});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("attention weights are row-stochastic and outputs stay in the hull of the values") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.range(1, 7), d = rng.range(1, 5);
    const Tensor p = random_tensor(rng, {n, d}, -3, 3), q = random_tensor(rng, {n, d}, -3, 3);
    const Tensor v = random_tensor(rng, {n, d}, -3, 3);
    const Mask keys = testing::random_mask(rng, n), queries = testing::random_mask(rng, n);
    const AttentionResult dot = dot_attention(q, v, keys, queries);
    check_row_stochastic(dot.weights, keys, queries);
    check_convex_hull(dot.output, q, keys, queries);
    const AttentionResult sub = subtract_attention(p, q, v, random_params(rng, d, d), keys, queries);
    check_row_stochastic(sub.weights, keys, queries);
    check_convex_hull(sub.output, p, keys, queries);
    for (std::size_t t = 0; t < n; ++t)
      if (!queries[t])
        for (std::size_t k = 0; k < d; ++k) CHECK((dot.output.at(t, k) == 0.0 && sub.output.at(t, k) == 0.0));
  }
}

TEST_CASE("identical Q rows come back unchanged whatever V is") {
  Rng rng(14);
  const Tensor u = random_tensor(rng, {1, 5});
  const Tensor q = concat({u, u, u, u}, 0);
  const Mask all(4, true);
  for (int trial = 0; trial < 5; ++trial) {
    const AttentionResult r = dot_attention(q, random_tensor(rng, {4, 5}, -10, 10), all, all);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t k = 0; k < 5; ++k) CHECK(r.output.at(t, k) == doctest::Approx(u.at(0, k)).epsilon(1e-14));
  }
}

TEST_CASE("scaled one-hot rows give near-identity attention") {
  const Tensor q({2, 2}, {10, 0, 0, 10});
  const Mask all(2, true);
  const AttentionResult r = dot_attention(q, q, all, all);
  CHECK(r.weights.at(0, 0) > 0.9999);
  CHECK(r.weights.at(1, 1) > 0.9999);
  CHECK(testing::max_abs_diff(r.output.values(), q.values()) < 1e-2);
}

TEST_CASE("zero W_m gives uniform weights and the mean of the valid P rows") {
  Rng rng(15);
  const Tensor p = random_tensor(rng, {4, 3}), q = random_tensor(rng, {4, 3}), v = random_tensor(rng, {4, 3});
  SubtractAttnParams params = random_params(rng, 3, 3);
  for (double& x : params.w_m.mutable_values()) x = 0.0;
  const Mask keys{true, false, true, true}, queries{true, true, true, false};
  const AttentionResult r = subtract_attention(p, q, v, params, keys, queries);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 3; ++k) {
      const double mean = (p.at(0, k) + p.at(2, k) + p.at(3, k)) / 3.0;
      CHECK(r.output.at(t, k) == doctest::Approx(mean).epsilon(1e-13));
      CHECK(r.weights.at(t, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
}

TEST_CASE("when every q_j equals every v_t the difference weights are uniform") {
  Rng rng(16);
  const Tensor u = random_tensor(rng, {1, 4});
  const Tensor same = concat({u, u, u}, 0);
  const Mask all(3, true);
  const AttentionResult r = subtract_attention(random_tensor(rng, {3, 4}), same, same, random_params(rng, 4, 4), all, all);
  for (double a : r.weights.values()) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("a fully masked key set is a degenerate-mask error") {
  Rng rng(17);
  const Tensor q = random_tensor(rng, {3, 2}), v = random_tensor(rng, {3, 2});
  const Mask none(3, false), all(3, true);
  CHECK_THROWS_AS(dot_attention(q, v, none, all), DegenerateMaskError);
  CHECK_THROWS_AS(subtract_attention(q, q, v, random_params(rng, 2, 2), none, all), DegenerateMaskError);
}

TEST_CASE("both attention paths pass grad_check at 1e-5") {
  Rng rng(18);
  const Mask keys{true, true}, queries{true, true};
  const Tensor q = testing::param(rng, {2, 4}), v = testing::param(rng, {2, 4}), p = testing::param(rng, {2, 4});
  const SubtractAttnParams params = random_params(rng, 4, 4, true);
  SUBCASE("dot") {
    const auto f = weighted_sum([&] { return dot_attention(q, v, keys, queries).output; }, rng, {2, 4});
    CHECK(grad_check(f, testing::named({q, v})).max_rel_error() < 1e-5);
  }
  SUBCASE("subtract") {
    const auto f = weighted_sum([&] { return subtract_attention(p, q, v, params, keys, queries).output; }, rng, {2, 4});
    CHECK(grad_check(f, testing::named({p, q, v, params.w_m, params.w_s})).max_rel_error() < 1e-5);
  }
  SUBCASE("masked key") {
    const Mask partial{true, false};
    const auto f = weighted_sum([&] { return subtract_attention(p, q, v, params, partial, queries).output; }, rng, {2, 4});
    CHECK(grad_check(f, testing::named({p, q, v, params.w_m, params.w_s})).max_rel_error() < 1e-5);
  }
}
