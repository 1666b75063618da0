#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpm {

using Shape = std::vector<std::size_t>;
using Mask = std::vector<bool>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class OpKind {
  kMatMul,
  kTranspose,
  kLinear,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTanh,
  kSigmoid,
  kLog,
  kGelu,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kMean,
  kMax,
  kConcat,
  kSlice,
  kPadRows,
  kGatherRows,
  kMaskRows,
  kRowScale,
  kPairwiseDiff,
  kLayerNorm,
  kReshape,
  kPickRows,
};

std::string_view op_name(OpKind kind);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  Tape* tape = nullptr;  // set for tape-recorded (non-leaf) tensors
  std::size_t node_id = 0;

  // Returns the gradient buffer, allocating zeros on first use, or nullptr
  // when this tensor does not participate in differentiation.
  double* grad_buffer();
};

}  // namespace detail

// Dense row-major tensor of doubles. Copies are shallow handles onto the same
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writable access for parameters and perturbation checks. Writing into a
  // tensor that has already been consumed by a recorded op invalidates
  // that op's saved state.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Tape handle; empty for leaves and for tensors built outside a TapeScope.
  std::optional<std::size_t> node_id() const;
  Tape* tape() const;

  Tensor clone() const;
  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

struct TapeNode {
  OpKind kind;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void(const TapeNode&)> backward;
};

// Append-only record of differentiable operations. Inputs of every node are
// either leaves or outputs of earlier nodes, so append order is a valid
// topological order and backward walks it in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t record(TapeNode node);
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }

  // Reverse-mode sweep from a scalar loss. Intermediate gradients are reset
  // first; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  // Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& last_visit_order() const { return last_visit_; }

 private:
  std::vector<TapeNode> nodes_;
  std::vector<std::size_t> last_visit_;
};

// Makes `tape` the recording target for ops on this thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

// Runs backward on the tape that produced `loss`.
void backward(const Tensor& loss);

namespace debug {

// Negative-control hook: scales the incoming gradient of every node of the
// given kind by `factor` during backward. Pass std::nullopt to disable.
void inject_backward_fault(std::optional<OpKind> kind, double factor = 1.5);
std::optional<OpKind> backward_fault();
double backward_fault_factor();

// Forward ops verify that finite inputs produce finite outputs. Defaults to
// on in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

}  // namespace debug

}  // namespace dpm
