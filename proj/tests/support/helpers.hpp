#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dpm/grad_check.hpp"
#include "dpm/random.hpp"
#include "dpm/tensor.hpp"
#include "oracles.hpp"

namespace testing {

inline dpm::Tensor random_tensor(dpm::Rng& rng, dpm::Shape shape, double lo = -1.0, double hi = 1.0) {
  dpm::Tensor t(std::move(shape));
  for (double& x : t.mutable_values()) x = rng.uniform(lo, hi);
  return t;
}

inline dpm::Tensor param(dpm::Rng& rng, dpm::Shape shape, double lo = -1.0, double hi = 1.0) {
  dpm::Tensor t = random_tensor(rng, std::move(shape), lo, hi);
  t.set_requires_grad(true);
  return t;
}

inline oracle::Mat to_mat(const dpm::Tensor& t) {
  const auto v = t.values();
  return oracle::Mat(t.dim(0), t.rank() > 1 ? t.dim(1) : 1, std::vector<double>(v.begin(), v.end()));
}

inline std::vector<double> to_vec(const dpm::Tensor& t) {
  const auto v = t.values();
  return {v.begin(), v.end()};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

inline oracle::Flags random_mask(dpm::Rng& rng, std::size_t n, double p_valid = 0.7) {
  oracle::Flags m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = rng.bernoulli(p_valid);
  m[rng.index(n)] = true;
  return m;
}

// Named leaves for grad_check.
inline std::vector<dpm::NamedTensor> named(const std::vector<dpm::Tensor>& ts) {
  std::vector<dpm::NamedTensor> out;
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({"arg" + std::to_string(i), ts[i]});
  return out;
}

}  // namespace testing
