#include "dpm/tensor.hpp"

#include <atomic>
#include <sstream>

#include "dpm/errors.hpp"

namespace dpm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kLinear: return "linear";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMax: return "max";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kPadRows: return "pad_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kMaskRows: return "mask_rows";
    case OpKind::kRowScale: return "row_scale";
    case OpKind::kPairwiseDiff: return "pairwise_diff";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kReshape: return "reshape";
    case OpKind::kPickRows: return "pick_rows";
  }
  return "unknown";
}

namespace detail {

double* TensorImpl::grad_buffer() {
  if (!requires_grad) return nullptr;
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

}  // namespace detail

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_to_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  shape();
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  shape();
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j) on tensor of shape " + shape_to_string(shape()));
  return impl_->data[i * impl_->shape[1] + j];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  shape();
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return impl_->grad;
}

void Tensor::zero_grad() {
  shape();
  impl_->grad.clear();
}

std::optional<std::size_t> Tensor::node_id() const {
  if (!impl_ || impl_->tape == nullptr) return std::nullopt;
  return impl_->node_id;
}

Tape* Tensor::tape() const { return impl_ ? impl_->tape : nullptr; }

Tensor Tensor::clone() const {
  Tensor out(shape(), std::vector<double>(impl_->data));
  out.impl_->requires_grad = impl_->requires_grad && impl_->tape == nullptr;
  return out;
}

Tape::~Tape() {
  for (auto& node : nodes_) {
    if (node.output) node.output->tape = nullptr;
  }
}

std::size_t Tape::record(TapeNode node) {
  const std::size_t id = nodes_.size();
  node.output->tape = this;
  node.output->node_id = id;
  nodes_.push_back(std::move(node));
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty()) throw ContractError("backward() on an empty tape");
  if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");

  for (auto& node : nodes_) node.output->grad.clear();
  loss.impl()->grad.assign(1, 1.0);

  last_visit_.clear();
  last_visit_.reserve(loss.impl()->node_id + 1);
  for (std::size_t id = loss.impl()->node_id + 1; id-- > 0;) {
    last_visit_.push_back(id);
    const TapeNode& node = nodes_[id];
    if (node.output->grad.empty()) continue;
    node.backward(node);
  }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<int> g_fault_kind{-1};
std::atomic<double> g_fault_factor{1.5};
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.tape() == nullptr) {
    throw ContractError("backward() on a tensor that was not recorded on a tape");
  }
  loss.tape()->backward(loss);
}

namespace debug {

void inject_backward_fault(std::optional<OpKind> kind, double factor) {
  g_fault_factor = factor;
  g_fault_kind = kind ? static_cast<int>(*kind) : -1;
}

std::optional<OpKind> backward_fault() {
  const int k = g_fault_kind.load();
  if (k < 0) return std::nullopt;
  return static_cast<OpKind>(k);
}

double backward_fault_factor() { return g_fault_factor.load(); }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks.load(); }

}  // namespace debug

}  // namespace dpm
