#include "dpm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dpm/errors.hpp"

namespace dpm {
namespace {

using Impl = detail::TensorImpl;
using BackwardFn = std::function<void(Impl& out, const std::vector<Impl*>& in)>;

constexpr double kMaskFill = -1e30;

bool all_finite(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

Tensor make_result(OpKind kind, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
  auto out = std::make_shared<Impl>();
  out->shape = std::move(shape);
  out->data = std::move(data);

  if (debug::finite_checks() && !all_finite(out->data)) {
    bool inputs_finite = true;
    for (const Tensor& t : inputs) inputs_finite = inputs_finite && all_finite(t.impl()->data);
    if (inputs_finite) {
      throw DomainError(std::string(op_name(kind)) + " produced a non-finite value from finite inputs");
    }
  }

  Tape* tape = active_tape();
  const bool needs_grad =
      tape != nullptr && std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return Tensor(std::move(out));

  out->requires_grad = true;
  TapeNode node;
  node.kind = kind;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.impl_ptr());
  node.output = out;
  node.backward = [kind, fn = std::move(fn)](const TapeNode& n) {
    if (auto fault = debug::backward_fault(); fault && *fault == kind) {
      const double f = debug::backward_fault_factor();
      for (double& g : n.output->grad) g *= f;
    }
    std::vector<Impl*> in;
    in.reserve(n.inputs.size());
    for (const auto& p : n.inputs) in.push_back(p.get());
    fn(*n.output, in);
  };
  tape->record(std::move(node));
  return Tensor(std::move(out));
}

[[noreturn]] void dimension_error(std::string_view op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    dimension_error(op, "expected rank " + std::to_string(rank) + ", got shape " +
                            shape_to_string(t.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    dimension_error(op, "axis " + std::to_string(axis) + " out of range for shape " +
                            shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_trailing_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

}  // namespace

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  const char* name = op == Elementwise::kAdd ? "add" : op == Elementwise::kSub ? "sub" : "mul";
  if (!is_trailing_suffix(a.shape(), b.shape())) {
    dimension_error(name, "shapes " + shape_to_string(a.shape()) + " and " +
                              shape_to_string(b.shape()) + " are not broadcastable");
  }
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  std::vector<double> out(n);
  if (m == 0) dimension_error(name, "empty right operand");
  switch (op) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i % m];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i % m];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i % m];
      break;
  }
  const OpKind kind = op == Elementwise::kAdd   ? OpKind::kAdd
                      : op == Elementwise::kSub ? OpKind::kSub
                                                : OpKind::kMul;
  return make_result(kind, a.shape(), std::move(out), {a, b}, [op, n, m](Impl& o, const std::vector<Impl*>& in) {
    const auto& g = o.grad;
    double* ga = in[0]->grad_buffer();
    double* gb = in[1]->grad_buffer();
    const auto& x = in[0]->data;
    const auto& y = in[1]->data;
    switch (op) {
      case Elementwise::kAdd:
        if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i];
        break;
      case Elementwise::kSub:
        if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) gb[i % m] -= g[i];
        break;
      case Elementwise::kMul:
        if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i % m];
        if (gb) for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i] * x[i];
        break;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.impl()->data);
  for (double& v : out) v *= factor;
  return make_result(OpKind::kScale, a.shape(), std::move(out), {a},
                     [factor](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * factor;
                       }
                     });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor activation(Activation op, const Tensor& a) {
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  OpKind kind = OpKind::kTanh;
  switch (op) {
    case Activation::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
      kind = OpKind::kTanh;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
      kind = OpKind::kSigmoid;
      break;
    case Activation::kLog:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
          throw DomainError("log: non-positive entry " + std::to_string(x[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(x[i]);
      }
      kind = OpKind::kLog;
      break;
    case Activation::kGelu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluK * v * v * v)));
      }
      kind = OpKind::kGelu;
      break;
  }
  return make_result(kind, a.shape(), std::move(out), {a}, [op](Impl& o, const std::vector<Impl*>& in) {
    double* ga = in[0]->grad_buffer();
    if (!ga) return;
    const auto& g = o.grad;
    const auto& y = o.data;
    const auto& x = in[0]->data;
    const std::size_t n = g.size();
    switch (op) {
      case Activation::kTanh:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::kLog:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / x[i];
        break;
      case Activation::kGelu:
        for (std::size_t i = 0; i < n; ++i) {
          const double v = x[i];
          const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
          const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
          ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
        break;
    }
  });
}

Tensor tanh(const Tensor& a) { return activation(Activation::kTanh, a); }
Tensor sigmoid(const Tensor& a) { return activation(Activation::kSigmoid, a); }
Tensor log(const Tensor& a) { return activation(Activation::kLog, a); }
Tensor gelu(const Tensor& a) { return activation(Activation::kGelu, a); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    dimension_error("matmul", "cannot multiply " + shape_to_string(a.shape()) + " by " +
                                  shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yr = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * yr[j];
    }
  }
  return make_result(OpKind::kMatMul, {m, n}, std::move(out), {a, b},
                     [m, k, n](Impl& o, const std::vector<Impl*>& in) {
                       const auto& g = o.grad;
                       const auto& x = in[0]->data;
                       const auto& y = in[1]->data;
                       if (double* ga = in[0]->grad_buffer()) {
                         // dA = G * B^T
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gr = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* yr = y.data() + p * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += gr[j] * yr[j];
                             ga[i * k + p] += acc;
                           }
                         }
                       }
                       if (double* gb = in[1]->grad_buffer()) {
                         // dB = A^T * G
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gr = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double xv = x[i * k + p];
                             double* br = gb + p * n;
                             for (std::size_t j = 0; j < n; ++j) br[j] += xv * gr[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& x = a.impl()->data;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result(OpKind::kTranspose, {c, r}, std::move(out), {a},
                     [r, c](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += o.grad[j * r + i];
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", weight, 2);
  if (x.rank() != 1 && x.rank() != 2) {
    dimension_error("linear", "input must be rank 1 or 2, got " + shape_to_string(x.shape()));
  }
  const std::size_t in_dim = weight.dim(1), out_dim = weight.dim(0);
  if (x.shape().back() != in_dim) {
    dimension_error("linear", "input " + shape_to_string(x.shape()) + " does not match weight " +
                                  shape_to_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    dimension_error("linear", "bias " + shape_to_string(bias.shape()) + " does not match weight " +
                                  shape_to_string(weight.shape()));
  }
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const auto& xv = x.impl()->data;
  const auto& w = weight.impl()->data;
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w.data() + o * in_dim;
      double acc = has_bias ? bias.impl()->data[o] : 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += xr[i] * wr[i];
      out[r * out_dim + o] = acc;
    }
  }
  Shape shape = x.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim};
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(OpKind::kLinear, std::move(shape), std::move(out), inputs,
                     [rows, in_dim, out_dim, has_bias](Impl& o, const std::vector<Impl*>& in) {
                       const auto& g = o.grad;
                       const auto& xv = in[0]->data;
                       const auto& w = in[1]->data;
                       if (double* gx = in[0]->grad_buffer()) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           double* gxr = gx + r * in_dim;
                           for (std::size_t k = 0; k < out_dim; ++k) {
                             const double gv = g[r * out_dim + k];
                             const double* wr = w.data() + k * in_dim;
                             for (std::size_t i = 0; i < in_dim; ++i) gxr[i] += gv * wr[i];
                           }
                         }
                       }
                       if (double* gw = in[1]->grad_buffer()) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* xr = xv.data() + r * in_dim;
                           for (std::size_t k = 0; k < out_dim; ++k) {
                             const double gv = g[r * out_dim + k];
                             double* gwr = gw + k * in_dim;
                             for (std::size_t i = 0; i < in_dim; ++i) gwr[i] += gv * xr[i];
                           }
                         }
                       }
                       if (has_bias) {
                         if (double* gb = in[2]->grad_buffer()) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t k = 0; k < out_dim; ++k) gb[k] += g[r * out_dim + k];
                         }
                       }
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis, const Mask* mask) {
  const AxisSplit s = split_axis("softmax", a.shape(), axis);
  const std::size_t total = a.numel();
  if (mask && mask->size() != s.n && mask->size() != total) {
    dimension_error("softmax", "mask of length " + std::to_string(mask->size()) +
                                   " does not fit shape " + shape_to_string(a.shape()) +
                                   " along axis " + std::to_string(axis));
  }
  const auto& x = a.impl()->data;
  std::vector<double> out(total, 0.0);
  auto valid = [&](std::size_t i, std::size_t flat) {
    if (!mask) return true;
    return mask->size() == s.n ? static_cast<bool>((*mask)[i]) : static_cast<bool>((*mask)[flat]);
  };
  std::vector<double> z(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      bool any = false;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t f = base + i * s.inner;
        const bool keep = valid(i, f);
        any = any || keep;
        z[i] = keep ? x[f] : x[f] + kMaskFill;
        m = std::max(m, z[i]);
      }
      if (!any) {
        throw DegenerateMaskError("softmax: every entry of slice " + std::to_string(o * s.inner + in) +
                                  " is masked");
      }
      double total_exp = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        z[i] = std::exp(z[i] - m);
        total_exp += z[i];
      }
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t f = base + i * s.inner;
        out[f] = valid(i, f) ? z[i] / total_exp : 0.0;
      }
    }
  }
  return make_result(OpKind::kSoftmax, a.shape(), std::move(out), {a}, [s](Impl& o, const std::vector<Impl*>& in) {
    double* ga = in[0]->grad_buffer();
    if (!ga) return;
    const auto& g = o.grad;
    const auto& y = o.data;
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t inn = 0; inn < s.inner; ++inn) {
        const std::size_t base = ou * s.n * s.inner + inn;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t f = base + i * s.inner;
          ga[f] += y[f] * (g[f] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis("log_softmax", a.shape(), axis);
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) m = std::max(m, x[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) total += std::exp(x[base + i * s.inner] - m);
      const double lse = m + std::log(total);
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] = x[base + i * s.inner] - lse;
    }
  }
  return make_result(OpKind::kLogSoftmax, a.shape(), std::move(out), {a},
                     [s](Impl& o, const std::vector<Impl*>& in) {
                       double* ga = in[0]->grad_buffer();
                       if (!ga) return;
                       const auto& g = o.grad;
                       const auto& y = o.data;
                       for (std::size_t ou = 0; ou < s.outer; ++ou) {
                         for (std::size_t inn = 0; inn < s.inner; ++inn) {
                           const std::size_t base = ou * s.n * s.inner + inn;
                           double gsum = 0.0;
                           for (std::size_t i = 0; i < s.n; ++i) gsum += g[base + i * s.inner];
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t f = base + i * s.inner;
                             ga[f] += g[f] - std::exp(y[f]) * gsum;
                           }
                         }
                       }
                     });
}

Tensor reduce(Reduction op, const Tensor& a, std::size_t axis) {
  const char* name = op == Reduction::kSum ? "sum" : op == Reduction::kMean ? "mean" : "max";
  const AxisSplit s = split_axis(name, a.shape(), axis);
  if (s.n == 0) dimension_error(name, "cannot reduce an empty axis");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& x = a.impl()->data;
  std::vector<double> out(s.outer * s.inner, 0.0);
  std::vector<std::size_t> argmax;
  if (op == Reduction::kMax) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      const std::size_t r = o * s.inner + in;
      if (op == Reduction::kMax) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.n; ++i)
          if (x[base + i * s.inner] > x[base + best * s.inner]) best = i;
        argmax[r] = best;
        out[r] = x[base + best * s.inner];
      } else {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) acc += x[base + i * s.inner];
        out[r] = op == Reduction::kMean ? acc / static_cast<double>(s.n) : acc;
      }
    }
  }
  const OpKind kind = op == Reduction::kSum ? OpKind::kSum : op == Reduction::kMean ? OpKind::kMean : OpKind::kMax;
  return make_result(kind, std::move(shape), std::move(out), {a},
                     [op, s, argmax = std::move(argmax)](Impl& o, const std::vector<Impl*>& in) {
                       double* ga = in[0]->grad_buffer();
                       if (!ga) return;
                       const auto& g = o.grad;
                       const double w = op == Reduction::kMean ? 1.0 / static_cast<double>(s.n) : 1.0;
                       for (std::size_t ou = 0; ou < s.outer; ++ou) {
                         for (std::size_t inn = 0; inn < s.inner; ++inn) {
                           const std::size_t base = ou * s.n * s.inner + inn;
                           const std::size_t r = ou * s.inner + inn;
                           if (op == Reduction::kMax) {
                             ga[base + argmax[r] * s.inner] += g[r];
                           } else {
                             for (std::size_t i = 0; i < s.n; ++i) ga[base + i * s.inner] += g[r] * w;
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& a, std::size_t axis) { return reduce(Reduction::kSum, a, axis); }
Tensor mean(const Tensor& a, std::size_t axis) { return reduce(Reduction::kMean, a, axis); }
Tensor max(const Tensor& a, std::size_t axis) { return reduce(Reduction::kMax, a, axis); }

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.impl()->data) acc += v;
  return make_result(OpKind::kSum, Shape{}, {acc}, {a}, [](Impl& o, const std::vector<Impl*>& in) {
    if (double* ga = in[0]->grad_buffer()) {
      for (std::size_t i = 0; i < in[0]->data.size(); ++i) ga[i] += o.grad[0];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) dimension_error("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    dimension_error("concat", "axis " + std::to_string(axis) + " out of range for shape " +
                                  shape_to_string(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor& t : parts) {
    const Shape& ts = t.shape();
    if (ts.size() != first.size()) {
      dimension_error("concat", "rank mismatch between " + shape_to_string(first) + " and " +
                                    shape_to_string(ts));
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (i != axis && ts[i] != first[i]) {
        dimension_error("concat", "shapes " + shape_to_string(first) + " and " + shape_to_string(ts) +
                                      " differ off the concatenation axis");
      }
    }
    shape[axis] += ts[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const Tensor& t : parts) widths.push_back(t.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;

  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& src = parts[k].impl()->data;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += widths[k];
    }
  }
  return make_result(OpKind::kConcat, std::move(shape), std::move(out), parts,
                     [outer, row, widths](Impl& o, const std::vector<Impl*>& in) {
                       for (std::size_t ou = 0; ou < outer; ++ou) {
                         std::size_t offset = ou * row;
                         for (std::size_t k = 0; k < in.size(); ++k) {
                           if (double* g = in[k]->grad_buffer()) {
                             for (std::size_t i = 0; i < widths[k]; ++i) g[ou * widths[k] + i] += o.grad[offset + i];
                           }
                           offset += widths[k];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis("slice", a.shape(), axis);
  if (begin > end || end > s.n) {
    dimension_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                 ") out of bounds for shape " + shape_to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  const auto& x = a.impl()->data;
  std::vector<double> out(s.outer * width);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * s.n + begin) * s.inner), width,
                out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return make_result(OpKind::kSlice, std::move(shape), std::move(out), {a},
                     [s, begin, width](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t ou = 0; ou < s.outer; ++ou) {
                           double* dst = ga + (ou * s.n + begin) * s.inner;
                           const double* src = o.grad.data() + ou * width;
                           for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor pad_rows(const Tensor& a, std::size_t rows) {
  if (a.rank() == 0) dimension_error("pad_rows", "scalar input");
  if (rows < a.dim(0)) {
    dimension_error("pad_rows", "cannot pad " + shape_to_string(a.shape()) + " down to " +
                                    std::to_string(rows) + " rows");
  }
  Shape shape = a.shape();
  shape[0] = rows;
  std::vector<double> out(shape_numel(shape), 0.0);
  const auto& x = a.impl()->data;
  std::copy(x.begin(), x.end(), out.begin());
  const std::size_t n = x.size();
  return make_result(OpKind::kPadRows, std::move(shape), std::move(out), {a},
                     [n](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
                       }
                     });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  require_rank("gather_rows", table, 2);
  const std::size_t n = table.dim(0), d = table.dim(1);
  const auto& x = table.impl()->data;
  std::vector<double> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      dimension_error("gather_rows", "row " + std::to_string(rows[r]) + " out of range for table " +
                                         shape_to_string(table.shape()));
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_result(OpKind::kGatherRows, {rows.size(), d}, std::move(out), {table},
                     [rows, d](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t r = 0; r < rows.size(); ++r)
                           for (std::size_t j = 0; j < d; ++j) ga[rows[r] * d + j] += o.grad[r * d + j];
                       }
                     });
}

Tensor mask_rows(const Tensor& a, const Mask& mask) {
  if (a.rank() == 0 || mask.size() != a.dim(0)) {
    dimension_error("mask_rows", "mask of length " + std::to_string(mask.size()) +
                                     " does not fit shape " + shape_to_string(a.shape()));
  }
  const std::size_t width = a.numel() / a.dim(0);
  std::vector<double> out(a.impl()->data);
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * width), width, 0.0);
  }
  return make_result(OpKind::kMaskRows, a.shape(), std::move(out), {a},
                     [mask, width](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t r = 0; r < mask.size(); ++r) {
                           if (!mask[r]) continue;
                           for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += o.grad[r * width + j];
                         }
                       }
                     });
}

Tensor row_scale(const Tensor& a, const Tensor& s) {
  require_rank("row_scale", a, 2);
  const std::size_t n = a.dim(0), d = a.dim(1);
  const bool column = s.rank() == 2 && s.dim(0) == n && s.dim(1) == 1;
  const bool flat = s.rank() == 1 && s.dim(0) == n;
  if (!column && !flat) {
    dimension_error("row_scale", "scale " + shape_to_string(s.shape()) + " does not fit rows of " +
                                     shape_to_string(a.shape()));
  }
  const auto& x = a.impl()->data;
  const auto& w = s.impl()->data;
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] * w[r];
  return make_result(OpKind::kRowScale, a.shape(), std::move(out), {a, s},
                     [n, d](Impl& o, const std::vector<Impl*>& in) {
                       const auto& g = o.grad;
                       const auto& x = in[0]->data;
                       const auto& w = in[1]->data;
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[r * d + j] * w[r];
                       }
                       if (double* gs = in[1]->grad_buffer()) {
                         for (std::size_t r = 0; r < n; ++r) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < d; ++j) acc += g[r * d + j] * x[r * d + j];
                           gs[r] += acc;
                         }
                       }
                     });
}

Tensor pairwise_diff(const Tensor& q, const Tensor& v) {
  require_rank("pairwise_diff", q, 2);
  require_rank("pairwise_diff", v, 2);
  if (q.dim(1) != v.dim(1)) {
    dimension_error("pairwise_diff", "feature sizes differ: " + shape_to_string(q.shape()) + " vs " +
                                         shape_to_string(v.shape()));
  }
  const std::size_t n = q.dim(0), m = v.dim(0), d = q.dim(1);
  const auto& qd = q.impl()->data;
  const auto& vd = v.impl()->data;
  std::vector<double> out(m * n * d);
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) out[(t * n + j) * d + k] = qd[j * d + k] - vd[t * d + k];
  return make_result(OpKind::kPairwiseDiff, {m * n, d}, std::move(out), {q, v},
                     [n, m, d](Impl& o, const std::vector<Impl*>& in) {
                       const auto& g = o.grad;
                       double* gq = in[0]->grad_buffer();
                       double* gv = in[1]->grad_buffer();
                       for (std::size_t t = 0; t < m; ++t)
                         for (std::size_t j = 0; j < n; ++j)
                           for (std::size_t k = 0; k < d; ++k) {
                             const double gv_ = g[(t * n + j) * d + k];
                             if (gq) gq[j * d + k] += gv_;
                             if (gv) gv[t * d + k] -= gv_;
                           }
                     });
}

Tensor layer_norm(const Tensor& a, double eps) {
  if (a.rank() == 0) dimension_error("layer_norm", "scalar input");
  const std::size_t d = a.shape().back();
  if (d == 0) dimension_error("layer_norm", "empty feature axis");
  const std::size_t rows = a.numel() / d;
  const auto& x = a.impl()->data;
  std::vector<double> out(x.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * rstd[r];
  }
  return make_result(OpKind::kLayerNorm, a.shape(), std::move(out), {a},
                     [rows, d, rstd = std::move(rstd)](Impl& o, const std::vector<Impl*>& in) {
                       double* ga = in[0]->grad_buffer();
                       if (!ga) return;
                       const auto& g = o.grad;
                       const auto& y = o.data;
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gm = 0.0, gy = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           gm += g[r * d + j];
                           gy += g[r * d + j] * y[r * d + j];
                         }
                         gm *= inv_d;
                         gy *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           ga[r * d + j] += rstd[r] * (g[r * d + j] - gm - y[r * d + j] * gy);
                         }
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    dimension_error("reshape", "cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
  }
  return make_result(OpKind::kReshape, std::move(shape), a.impl()->data, {a},
                     [](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
                       }
                     });
}

Tensor pick_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  require_rank("pick_rows", a, 2);
  const std::size_t b = a.dim(0), c = a.dim(1);
  if (index.size() != b) {
    dimension_error("pick_rows", std::to_string(index.size()) + " indices for " + shape_to_string(a.shape()));
  }
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (index[i] >= c) {
      dimension_error("pick_rows", "index " + std::to_string(index[i]) + " at row " + std::to_string(i) +
                                       " out of range for " + shape_to_string(a.shape()));
    }
    out[i] = a.impl()->data[i * c + index[i]];
  }
  return make_result(OpKind::kPickRows, {b}, std::move(out), {a},
                     [index, c](Impl& o, const std::vector<Impl*>& in) {
                       if (double* ga = in[0]->grad_buffer()) {
                         for (std::size_t i = 0; i < index.size(); ++i) ga[i * c + index[i]] += o.grad[i];
                       }
                     });
}

}  // namespace dpm
