#pragma once

#include <cstddef>
#include <vector>

#include "dpm/tensor.hpp"

// Differentiable tensor primitives. Every op either returns a correctly
// shaped result or throws DimensionError; the only implicit broadcast is a
// right operand whose shape equals the trailing dimensions of the left one.
namespace dpm {

enum class Elementwise { kAdd, kSub, kMul };
enum class Activation { kTanh, kSigmoid, kLog, kGelu };
enum class Reduction { kSum, kMean, kMax };

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor activation(Activation op, const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
// tanh approximation of GELU
Tensor gelu(const Tensor& a);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x * W^T + b for x of shape [in] or [rows x in], W of shape [out x in].
// `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

// Softmax along `axis`. A mask either has one entry per position along the
// axis (shared by every slice) or one entry per element. Masked entries get
// exactly zero weight.
Tensor softmax(const Tensor& a, std::size_t axis, const Mask* mask = nullptr);
Tensor log_softmax(const Tensor& a, std::size_t axis);

Tensor reduce(Reduction op, const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
// Gradient goes to the first maximal entry of each slice.
Tensor max(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Appends zero rows along axis 0 until there are `rows` of them.
Tensor pad_rows(const Tensor& a, std::size_t rows);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows);
// Zeroes every row i of `a` (axis 0) with mask[i] == false.
Tensor mask_rows(const Tensor& a, const Mask& mask);
// a [n x d] scaled row-wise by s [n x 1].
Tensor row_scale(const Tensor& a, const Tensor& s);
// q [n x d], v [m x d] -> [m*n x d], row t*n + j holds q_j - v_t.
Tensor pairwise_diff(const Tensor& q, const Tensor& v);
// Per-row standardization of a [n x d] matrix, no affine part.
Tensor layer_norm(const Tensor& a, double eps);
Tensor reshape(const Tensor& a, Shape shape);
// a [b x c] -> [b], entry i is a[i][index[i]].
Tensor pick_rows(const Tensor& a, const std::vector<std::size_t>& index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace dpm
