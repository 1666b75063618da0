#include "dpm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dpm/errors.hpp"

namespace dpm {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : parameters) worst = std::max(worst, p.max_rel_error);
  return worst;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           double step) {
  std::vector<std::vector<double>> analytic;
  {
    std::vector<bool> saved_flags;
    for (const auto& p : params) {
      saved_flags.push_back(p.tensor.requires_grad());
      Tensor t = p.tensor;
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    if (loss.numel() != 1) throw ContractError("grad_check needs a scalar program");
    if (loss.tape() != nullptr) tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      analytic.emplace_back(t.numel(), 0.0);
      if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
      t.zero_grad();
      t.set_requires_grad(saved_flags[i]);
    }
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    ParameterCheck check;
    check.name = params[i].name;
    check.numel = t.numel();
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double original = values[k];
      values[k] = original + step;
      const double up = f().item();
      values[k] = original - step;
      const double down = f().item();
      values[k] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[i][k], numeric);
      if (k == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = k;
        check.worst_analytic = analytic[i][k];
        check.worst_numeric = numeric;
      }
    }
    report.parameters.push_back(std::move(check));
  }
  return report;
}

}  // namespace dpm
