#pragma once

#include "irra/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace irra {

// Differentiable free functions over Tensor. Binary elementwise ops accept a
// right operand whose shape equals, or is a trailing suffix of, the left
// operand's shape (e.g. a bias row added to every row).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor exp(const Tensor& a);
/// Natural log; throws DegenerateInputError on non-positive entries.
Tensor log(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[..., in] * w[in, out] (+ b[out]); leading dims are treated as rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, std::ptrdiff_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
/// Repeats `a` along new leading dims so that its shape becomes `shape`
/// (a's shape must be a suffix of `shape`).
Tensor expand(const Tensor& a, Shape shape);
/// Treats `a` as a (size/last) x last matrix and gathers the given rows.
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis = -1);

inline constexpr double kLayerNormEps = 1e-5;
/// Normalises every slice along the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// Divides every row (last axis) by its Euclidean norm.
Tensor l2_normalize_rows(const Tensor& x);

/// Scaled dot-product attention split over `heads` along the feature axis.
///
/// q is [B, Lq, d] (or [Lq, d]); k and v are [B, Lk, d]. Each head uses
/// d / heads features and scale 1/sqrt(d / heads). With `causal`, query i
/// only sees keys j <= i. Output has q's shape. No projections are applied.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 bool causal = false);

/// Attention probabilities for inspection, laid out [B, heads, Lq, Lk].
std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            bool causal = false);

}  // namespace irra
