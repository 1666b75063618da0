#include <cmath>

#include "doctest.h"
#include "dpm/composition.hpp"
#include "dpm/ops.hpp"
#include "helpers.hpp"

using namespace dpm;
using testing::random_tensor;

namespace {

void randomize(ParameterStore& store, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& e : store.entries()) {
    Tensor t = e.tensor;
    for (double& x : t.mutable_values()) x = rng.uniform(lo, hi);
  }
}

void fill(Tensor t, double value) {
  for (double& x : t.mutable_values()) x = value;
}

std::function<Tensor()> weighted_sum(std::function<Tensor()> f, Rng& rng, Shape shape) {
  const Tensor w = random_tensor(rng, std::move(shape), 0.5, 1.5);
  return [f, w] { return sum_all(mul(f(), w)); };
}

}  // namespace

TEST_CASE("internal aggregation matches the scalar oracle") {
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ParameterStore store;
    const bool vector_gate = trial % 3 == 2, use_gate = trial % 5 != 4;
    const InternalAggParams params = InternalAggParams::create(store, rng, "agg", 4, vector_gate);
    randomize(store, rng);
    const Tensor att = random_tensor(rng, {2, 4}, -2, 2), v = random_tensor(rng, {2, 4}, -2, 2);
    const Mask mask = testing::random_mask(rng, 2);
    const InternalAggResult r = internal_aggregate(att, v, params, mask, use_gate);
    const auto ref = oracle::internal_aggregate(testing::to_mat(att), testing::to_mat(v), testing::to_mat(params.w_g),
                                                testing::to_mat(params.transform.weight),
                                                testing::to_vec(params.transform.bias), mask, use_gate);
    worst = std::max(worst, testing::max_abs_diff(r.h.values(), ref.h.v));
    if (use_gate) {
      for (std::size_t t = 0; t < 2; ++t)
        if (mask[t])
          for (std::size_t a = 0; a < r.gate.dim(1); ++a) worst = std::max(worst, std::abs(r.gate.at(t, a) - ref.gate(t, a)));
    } else {
      CHECK_FALSE(r.gate.defined());
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("external aggregation matches the scalar oracle") {
  Rng rng(22);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ParameterStore store;
    const ExternalAggParams params = ExternalAggParams::create(store, rng, "ext", 4, trial % 2 == 0 ? 4 : 3);
    randomize(store, rng);
    const Tensor hd = random_tensor(rng, {2, 4}), hs = random_tensor(rng, {2, 4}), v = random_tensor(rng, {2, 4});
    const Mask mask = testing::random_mask(rng, 2);
    const ExternalAggResult r = external_aggregate(hd, hs, v, params, mask);
    const auto ref = oracle::external_aggregate(testing::to_mat(hd), testing::to_mat(hs), testing::to_mat(v),
                                                testing::to_mat(params.w_1), testing::to_mat(params.w_2),
                                                testing::to_vec(params.score), mask);
    worst = std::max({worst, testing::max_abs_diff(r.x.values(), ref.x.v),
                      testing::max_abs_diff(r.weights.values(), ref.weights.v)});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("gates stay strictly inside (0, 1)") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore store;
    const InternalAggParams params = InternalAggParams::create(store, rng, "agg", 3, trial % 2 == 1);
    randomize(store, rng, -3, 3);
    const std::size_t n = rng.range(1, 6);
    const InternalAggResult r =
        internal_aggregate(random_tensor(rng, {n, 3}, -3, 3), random_tensor(rng, {n, 3}, -3, 3), params, Mask(n, true));
    for (double g : r.gate.values()) CHECK((g > 0.0 && g < 1.0));
  }
}

TEST_CASE("path weights sum to one and x lies between the two paths") {
  Rng rng(24);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterStore store;
    const ExternalAggParams params = ExternalAggParams::create(store, rng, "ext", 3, 3);
    randomize(store, rng, -3, 3);
    const std::size_t n = rng.range(1, 6);
    const Tensor hd = random_tensor(rng, {n, 3}), hs = random_tensor(rng, {n, 3});
    const Mask mask = testing::random_mask(rng, n);
    const ExternalAggResult r = external_aggregate(hd, hs, random_tensor(rng, {n, 3}), params, mask);
    for (std::size_t t = 0; t < n; ++t) {
      const double a_d = r.weights.at(t, 0), a_s = r.weights.at(t, 1);
      if (!mask[t]) {
        CHECK((a_d == 0.0 && a_s == 0.0));
        for (std::size_t k = 0; k < 3; ++k) CHECK(r.x.at(t, k) == 0.0);
        continue;
      }
      CHECK((a_d >= 0.0 && a_s >= 0.0));
      CHECK(std::abs(a_d + a_s - 1.0) <= 1e-12);
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(r.x.at(t, k) >= std::min(hd.at(t, k), hs.at(t, k)) - 1e-15);
        CHECK(r.x.at(t, k) <= std::max(hd.at(t, k), hs.at(t, k)) + 1e-15);
      }
    }
  }
}

TEST_CASE("a zero gate matrix halves the input") {
  Rng rng(25);
  ParameterStore store;
  InternalAggParams params = InternalAggParams::create(store, rng, "agg", 3, false);
  randomize(store, rng);
  fill(params.w_g, 0.0);
  const Tensor att = random_tensor(rng, {2, 3}), v = random_tensor(rng, {2, 3});
  const InternalAggResult r = internal_aggregate(att, v, params, Mask(2, true));
  for (double g : r.gate.values()) CHECK(g == 0.5);
  const Tensor expected = tanh(params.transform.forward(scale(concat({att, v}, 1), 0.5)));
  CHECK(testing::max_abs_diff(r.h.values(), expected.values()) < 1e-15);
}

TEST_CASE("zero transform weights and bias annihilate the output") {
  Rng rng(26);
  ParameterStore store;
  InternalAggParams params = InternalAggParams::create(store, rng, "agg", 3, false);
  randomize(store, rng);
  fill(params.transform.weight, 0.0);
  fill(params.transform.bias, 0.0);
  const InternalAggResult r = internal_aggregate(random_tensor(rng, {3, 3}, -5, 5), random_tensor(rng, {3, 3}, -5, 5),
                                                 params, Mask(3, true));
  for (double h : r.h.values()) CHECK(h == 0.0);
}

TEST_CASE("equal paths fuse to themselves") {
  Rng rng(27);
  ParameterStore store;
  const ExternalAggParams params = ExternalAggParams::create(store, rng, "ext", 4, 4);
  randomize(store, rng);
  const Tensor h = random_tensor(rng, {3, 4});
  const ExternalAggResult r = external_aggregate(h, h, random_tensor(rng, {3, 4}), params, Mask(3, true));
  CHECK(testing::max_abs_diff(r.x.values(), h.values()) < 1e-15);
}

TEST_CASE("a zero scorer averages the paths") {
  Rng rng(28);
  ParameterStore store;
  ExternalAggParams params = ExternalAggParams::create(store, rng, "ext", 4, 4);
  randomize(store, rng);
  fill(params.score, 0.0);
  const Tensor hd = random_tensor(rng, {3, 4}), hs = random_tensor(rng, {3, 4});
  const ExternalAggResult r = external_aggregate(hd, hs, random_tensor(rng, {3, 4}), params, Mask(3, true));
  for (double a : r.weights.values()) CHECK(a == 0.5);
  CHECK(testing::max_abs_diff(r.x.values(), scale(add(hd, hs), 0.5).values()) < 1e-15);
}

TEST_CASE("forcing the weights to (1, 0) returns the dot path bit for bit") {
  Rng rng(29);
  const Tensor hd = random_tensor(rng, {4, 5}, -3, 3), hs = random_tensor(rng, {4, 5}, -3, 3);
  const ExternalAggResult r = combine_paths(hd, hs, fixed_path_weights(4, 1.0, 0.0), Mask(4, true));
  CHECK(testing::bit_equal(r.x.values(), hd.values()));
}

TEST_CASE("both aggregations pass grad_check at 1e-5") {
  Rng rng(30);
  const Mask mask{true, true};
  const Tensor a = testing::param(rng, {2, 4}), b = testing::param(rng, {2, 4}), v = testing::param(rng, {2, 4});
  SUBCASE("internal, scalar gate") {
    ParameterStore store;
    const InternalAggParams params = InternalAggParams::create(store, rng, "agg", 4, false);
    randomize(store, rng);
    auto leaves = store.entries();
    for (auto& n : testing::named({a, v})) leaves.push_back(n);
    const auto f = weighted_sum([&] { return internal_aggregate(a, v, params, mask).h; }, rng, {2, 4});
    CHECK(grad_check(f, leaves).max_rel_error() < 1e-5);
  }
  SUBCASE("internal, vector gate") {
    ParameterStore store;
    const InternalAggParams params = InternalAggParams::create(store, rng, "agg", 4, true);
    randomize(store, rng);
    auto leaves = store.entries();
    for (auto& n : testing::named({a, v})) leaves.push_back(n);
    const auto f = weighted_sum([&] { return internal_aggregate(a, v, params, mask).h; }, rng, {2, 4});
    CHECK(grad_check(f, leaves).max_rel_error() < 1e-5);
  }
  SUBCASE("external") {
    ParameterStore store;
    const ExternalAggParams params = ExternalAggParams::create(store, rng, "ext", 4, 4);
    randomize(store, rng);
    auto leaves = store.entries();
    for (auto& n : testing::named({a, b, v})) leaves.push_back(n);
    const auto f = weighted_sum([&] { return external_aggregate(a, b, v, params, mask).x; }, rng, {2, 4});
    CHECK(grad_check(f, leaves).max_rel_error() < 1e-5);
  }
}
