#pragma once

#include <cstddef>
#include <vector>

#include "iwadv/autodiff/tensor.hpp"

namespace iwadv::ad {

// Elementwise binary ops broadcast along size-1 axes (shapes are right-aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);  // log(sigmoid(a)) without overflow
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false);

/// log(sum(exp(a))) along `axis`, shifted by the axis maximum.
Tensor logsumexp(const Tensor& a, std::size_t axis, bool keepdim = false);

/// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

struct Padding {
  std::size_t left = 0;
  std::size_t right = 0;
  /// Zero padding that preserves length for a kernel of width `kernel`.
  static Padding same(std::size_t kernel) {
    return {(kernel - 1) / 2, kernel - 1 - (kernel - 1) / 2};
  }
  static Padding valid() { return {0, 0}; }
};

/// Stride-1 1-D cross-correlation. x: [batch, in, length], weight: [out, in, width],
/// bias: [out] or undefined. Result: [batch, out, length + left + right - width + 1].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Padding padding);
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of `a` along axis 0 picked by `rows` (repeats allowed).
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);

/// Each row of `a` repeated `times` times in place: [r0, r0, r1, r1, ...].
Tensor repeat_rows(const Tensor& a, std::size_t times);

/// Same values, cut from the tape.
Tensor detach(const Tensor& a);

/// Forward value `hard`, gradient routed to `soft` unchanged.
Tensor straight_through(const Tensor& soft, const Tensor& hard);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

}  // namespace iwadv::ad
