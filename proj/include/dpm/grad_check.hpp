#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dpm/tensor.hpp"

namespace dpm {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ParameterCheck {
  std::string name;
  std::size_t numel = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients of the scalar program `f` against central
// differences (f(p+h) - f(p-h)) / 2h for every entry of every parameter.
// `f` must be deterministic and rebuild its graph from the current parameter
// values on each call. Parameters are restored exactly afterwards.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           double step = 1e-5);

}  // namespace dpm
