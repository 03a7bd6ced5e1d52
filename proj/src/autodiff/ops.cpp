#include "iwadv/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace iwadv::ad {

namespace {

using detail::NodePtr;

std::string pair_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

// Maps each output element of a broadcast binary op to its operand elements.
struct BroadcastPlan {
  enum class Kind { same, a_scalar, b_scalar, general };
  Kind kind = Kind::same;
  Shape out;
  std::vector<std::size_t> ia, ib;

  std::size_t a_index(std::size_t i) const {
    switch (kind) {
      case Kind::same:
      case Kind::b_scalar:
        return i;
      case Kind::a_scalar:
        return 0;
      default:
        return ia[i];
    }
  }
  std::size_t b_index(std::size_t i) const {
    switch (kind) {
      case Kind::same:
      case Kind::a_scalar:
        return i;
      case Kind::b_scalar:
        return 0;
      default:
        return ib[i];
    }
  }
};

std::shared_ptr<const BroadcastPlan> make_plan(const Shape& a, const Shape& b, const char* op) {
  auto plan = std::make_shared<BroadcastPlan>();
  if (a == b) {
    plan->out = a;
    return plan;
  }
  if (numel(a) == 1 && a.size() <= b.size()) {
    plan->kind = BroadcastPlan::Kind::a_scalar;
    plan->out = b;
    return plan;
  }
  if (numel(b) == 1 && b.size() <= a.size()) {
    plan->kind = BroadcastPlan::Kind::b_scalar;
    plan->out = a;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) throw ShapeError(pair_msg(op, a, b));
    out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = numel(out);
  plan->kind = BroadcastPlan::Kind::general;
  plan->ia.resize(n);
  plan->ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off_a = 0, off_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan->ia[i] = off_a;
    plan->ib[i] = off_b;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off_a += sa[d];
      off_b += sb[d];
      if (idx[d] < out[d]) break;
      off_a -= sa[d] * idx[d];
      off_b -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  plan->out = std::move(out);
  return plan;
}

// bwd(a, b, out) -> {d out / d a, d out / d b}
template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  auto plan = make_plan(a.shape(), b.shape(), name);
  const std::size_t n = numel(plan->out);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  if (plan->kind == BroadcastPlan::Kind::same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_index(i)], bv[plan->b_index(i)]);
  }
  if (!should_record({&a, &b})) return Tensor(plan->out, std::move(out));
  NodePtr an = a.node(), bn = b.node();
  Tensor result(plan->out, std::move(out));
  NodePtr on = result.node();
  active_tape()->record(on, {an, bn}, [an, bn, on = on.get(), plan, bwd](std::span<const double> g) {
    const std::size_t count = g.size();
    std::span<double> ga, gb;
    if (an->requires_grad) ga = an->grad_buffer();
    if (bn->requires_grad) gb = bn->grad_buffer();
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t ia = plan->a_index(i), ib = plan->b_index(i);
      auto [da, db] = bwd(an->value[ia], bn->value[ib], on->value[i]);
      if (!ga.empty()) ga[ia] += g[i] * da;
      if (!gb.empty()) gb[ib] += g[i] * db;
    }
  });
  return result;
}

// bwd(a, out) -> d out / d a
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  if (!should_record({&a})) return Tensor(a.shape(), std::move(out));
  NodePtr an = a.node();
  Tensor result(a.shape(), std::move(out));
  NodePtr on = result.node();
  active_tape()->record(on, {an}, [an, on = on.get(), bwd](std::span<const double> g) {
    auto ga = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(an->value[i], on->value[i]);
  });
  return result;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.n = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto bv = b.values();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (bv[i] == 0.0) throw DomainError("div: zero divisor at index " + std::to_string(i));
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Tensor add(const Tensor& a, double b) {
  return unary_op(
      a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary_op(
      a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Tensor log(const Tensor& a) {
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("log: non-positive value " + std::to_string(av[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, stable_sigmoid, [](double, double o) { return o * (1.0 - o); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return -stable_softplus(-x); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Tensor pow(const Tensor& a, double exponent) {
  if (exponent != std::floor(exponent)) {
    auto av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (av[i] < 0.0) {
        throw DomainError("pow: negative base " + std::to_string(av[i]) +
                          " with non-integer exponent");
      }
    }
  }
  return unary_op(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  if (!should_record({&a})) return Tensor::scalar(total);
  NodePtr an = a.node();
  return custom_op({}, {total}, {a}, [an](std::span<const double> g) {
    auto ga = an->grad_buffer();
    for (auto& v : ga) v += g[0];
  });
}

Tensor sum(const Tensor& a, std::size_t axis, bool keepdim) {
  const auto s = split_axis(a.shape(), axis, "sum");
  auto av = a.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* src = av.data() + (o * s.n + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  Shape shape = reduced_shape(a.shape(), axis, keepdim);
  if (!should_record({&a})) return Tensor(std::move(shape), std::move(out));
  NodePtr an = a.node();
  return custom_op(std::move(shape), std::move(out), {a}, [an, s](std::span<const double> g) {
    auto ga = an->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.n; ++j) {
        double* dst = ga.data() + (o * s.n + j) * s.inner;
        const double* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(n));
}

Tensor mean(const Tensor& a, std::size_t axis, bool keepdim) {
  const std::size_t n = a.dim(axis);
  if (n == 0) throw ShapeError("mean over empty axis of shape " + shape_str(a.shape()));
  return mul(sum(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor logsumexp(const Tensor& a, std::size_t axis, bool keepdim) {
  const auto s = split_axis(a.shape(), axis, "logsumexp");
  if (s.n == 0) throw ShapeError("logsumexp over empty axis of shape " + shape_str(a.shape()));
  auto av = a.values();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) m = std::max(m, av[(o * s.n + j) * s.inner + i]);
      if (!std::isfinite(m)) {
        out[o * s.inner + i] = m;
        continue;
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) acc += std::exp(av[(o * s.n + j) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(acc);
    }
  }
  Shape shape = reduced_shape(a.shape(), axis, keepdim);
  if (!should_record({&a})) return Tensor(std::move(shape), std::move(out));
  NodePtr an = a.node();
  Tensor result(std::move(shape), std::move(out));
  NodePtr on = result.node();
  active_tape()->record(on, {an}, [an, on = on.get(), s](std::span<const double> g) {
    auto ga = an->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double lse = on->value[o * s.inner + i];
        const double gi = g[o * s.inner + i];
        if (!std::isfinite(lse)) continue;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = (o * s.n + j) * s.inner + i;
          ga[k] += gi * std::exp(an->value[k] - lse);
        }
      }
    }
  });
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(pair_msg("matmul", a.shape(), b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  if (!should_record({&a, &b})) return Tensor({m, n}, std::move(out));
  NodePtr an = a.node(), bn = b.node();
  return custom_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](std::span<const double> g) {
    if (an->requires_grad) {
      auto ga = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bn->value.data() + p * n;
          const double* grow = g.data() + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      auto gb = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = an->value[i * k + p];
          double* dst = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += aip * grow[j];
        }
      }
    }
  });
}

namespace {

struct ConvDims {
  std::size_t batch, cin, len, cout, width, lout, left;
};

constexpr std::size_t kConvChunk = 256;

// cols[c * width + j, t - t0] = x[c, t + j - left], zero outside the input
void im2col(const double* x, const ConvDims& d, std::size_t t0, std::size_t n, double* cols) {
  for (std::size_t c = 0; c < d.cin; ++c) {
    const double* xr = x + c * d.len;
    for (std::size_t j = 0; j < d.width; ++j) {
      double* row = cols + (c * d.width + j) * n;
      for (std::size_t i = 0; i < n; ++i) {
        const auto f = static_cast<std::ptrdiff_t>(t0 + i + j) - static_cast<std::ptrdiff_t>(d.left);
        row[i] = f >= 0 && f < static_cast<std::ptrdiff_t>(d.len) ? xr[f] : 0.0;
      }
    }
  }
}

// y += a * x over n entries; lanes are independent, so the result does not
// depend on how the loop is vectorized
void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// dot product with a fixed 8-way split of the sum
double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

void conv_forward(const double* x, const double* w, const double* bias, double* out, const ConvDims& d) {
  const std::size_t k = d.cin * d.width;
  thread_local std::vector<double> cols;  // reused so that short windows cost no allocation
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* xb = x + b * d.cin * d.len;
    double* yb = out + b * d.cout * d.lout;
    for (std::size_t t0 = 0; t0 < d.lout; t0 += kConvChunk) {
      const std::size_t n = std::min(kConvChunk, d.lout - t0);
      cols.resize(k * n);
      im2col(xb, d, t0, n, cols.data());
      for (std::size_t o = 0; o < d.cout; ++o) {
        double* y = yb + o * d.lout + t0;
        std::fill(y, y + n, bias ? bias[o] : 0.0);
        for (std::size_t r = 0; r < k; ++r) axpy(w[o * k + r], cols.data() + r * n, y, n);
      }
    }
  }
}

void conv_backward(const double* x, const double* w, const double* g, double* gx, double* gw, double* gb,
                   const ConvDims& d) {
  const std::size_t k = d.cin * d.width;
  thread_local std::vector<double> cols, gcols;
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* xb = x + b * d.cin * d.len;
    const double* gyb = g + b * d.cout * d.lout;
    for (std::size_t t0 = 0; t0 < d.lout; t0 += kConvChunk) {
      const std::size_t n = std::min(kConvChunk, d.lout - t0);
      if (gb) {
        for (std::size_t o = 0; o < d.cout; ++o) {
          const double* gy = gyb + o * d.lout + t0;
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += gy[i];
          gb[o] += acc;
        }
      }
      if (gw) {
        cols.resize(k * n);
        im2col(xb, d, t0, n, cols.data());
        for (std::size_t o = 0; o < d.cout; ++o) {
          for (std::size_t r = 0; r < k; ++r) gw[o * k + r] += dot(gyb + o * d.lout + t0, cols.data() + r * n, n);
        }
      }
      if (gx) {
        gcols.assign(k * n, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
          for (std::size_t o = 0; o < d.cout; ++o) axpy(w[o * k + r], gyb + o * d.lout + t0, gcols.data() + r * n, n);
        }
        double* gxb = gx + b * d.cin * d.len;
        for (std::size_t c = 0; c < d.cin; ++c) {
          for (std::size_t j = 0; j < d.width; ++j) {
            const double* row = gcols.data() + (c * d.width + j) * n;
            for (std::size_t i = 0; i < n; ++i) {
              const auto f = static_cast<std::ptrdiff_t>(t0 + i + j) - static_cast<std::ptrdiff_t>(d.left);
              if (f >= 0 && f < static_cast<std::ptrdiff_t>(d.len)) gxb[c * d.len + f] += row[i];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return conv1d(x, weight, bias, Padding::same(weight.rank() == 3 ? weight.dim(2) : 1));
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Padding padding) {
  if (x.rank() != 3 || weight.rank() != 3 || x.dim(1) != weight.dim(1)) {
    throw ShapeError(pair_msg("conv1d", x.shape(), weight.shape()));
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = weight.dim(0), width = weight.dim(2);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError(pair_msg("conv1d bias", bias.shape(), weight.shape()));
  }
  if (len + padding.left + padding.right < width) {
    throw ShapeError(pair_msg("conv1d (input shorter than kernel)", x.shape(), weight.shape()));
  }
  const std::size_t lout = len + padding.left + padding.right - width + 1;

  std::vector<double> out(batch * cout * lout, 0.0);
  conv_forward(x.values().data(), weight.values().data(), bias.defined() ? bias.values().data() : nullptr, out.data(),
               {batch, cin, len, cout, width, lout, padding.left});
  Shape shape{batch, cout, lout};
  if (!should_record({&x, &weight, &bias})) return Tensor(std::move(shape), std::move(out));

  NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const ConvDims dims{batch, cin, len, cout, width, lout, padding.left};
  return custom_op(std::move(shape), std::move(out), inputs, [=](std::span<const double> g) {
    double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
    double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
    double* gb = bn && bn->requires_grad ? bn->grad_buffer().data() : nullptr;
    conv_backward(xn->value.data(), wn->value.data(), g.data(), gx, gw, gb, dims);
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError(pair_msg("concat", first, s));
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) chunk[p] = parts[p].dim(axis) * inner;
  const std::size_t row = shape[axis] * inner;

  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t pos = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto v = parts[p].values();
      std::copy_n(v.data() + o * chunk[p], chunk[p], out.data() + pos);
      pos += chunk[p];
    }
  }
  bool record = false;
  for (const auto& p : parts) record = record || should_record({&p});
  if (!record) return Tensor(std::move(shape), std::move(out));
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return custom_op(std::move(shape), std::move(out), parts,
                   [nodes, chunk, outer, row](std::span<const double> g) {
                     for (std::size_t o = 0; o < outer; ++o) {
                       std::size_t pos = o * row;
                       for (std::size_t p = 0; p < nodes.size(); ++p) {
                         if (nodes[p]->requires_grad) {
                           auto gp = nodes[p]->grad_buffer();
                           for (std::size_t i = 0; i < chunk[p]; ++i) gp[o * chunk[p] + i] += g[pos + i];
                         }
                         pos += chunk[p];
                       }
                     }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) throw ShapeError(pair_msg("reshape", a.shape(), shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  if (!should_record({&a})) return Tensor(std::move(shape), std::move(out));
  NodePtr an = a.node();
  return custom_op(std::move(shape), std::move(out), {a}, [an](std::span<const double> g) {
    auto ga = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_axis(a.shape(), axis, "slice");
  if (begin > end || end > s.n) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis " + std::to_string(axis) + " of shape " +
                     shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  auto av = a.values();
  std::vector<double> out(s.outer * width);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data() + (o * s.n + begin) * s.inner, width, out.data() + o * width);
  }
  if (!should_record({&a})) return Tensor(std::move(shape), std::move(out));
  NodePtr an = a.node();
  return custom_op(std::move(shape), std::move(out), {a},
                   [an, s, begin, width](std::span<const double> g) {
                     auto ga = an->grad_buffer();
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       double* dst = ga.data() + (o * s.n + begin) * s.inner;
                       const double* src = g.data() + o * width;
                       for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                     }
                   });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  if (a.rank() == 0) throw ShapeError("gather_rows on a scalar");
  const std::size_t n = a.dim(0);
  const std::size_t width = n == 0 ? 0 : a.size() / n;
  Shape shape = a.shape();
  shape[0] = rows.size();
  auto av = a.values();
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range for shape " +
                       shape_str(a.shape()));
    }
    std::copy_n(av.data() + rows[r] * width, width, out.data() + r * width);
  }
  if (!should_record({&a})) return Tensor(std::move(shape), std::move(out));
  NodePtr an = a.node();
  return custom_op(std::move(shape), std::move(out), {a},
                   [an, rows, width](std::span<const double> g) {
                     auto ga = an->grad_buffer();
                     for (std::size_t r = 0; r < rows.size(); ++r) {
                       double* dst = ga.data() + rows[r] * width;
                       const double* src = g.data() + r * width;
                       for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                     }
                   });
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  if (a.rank() == 0) throw ShapeError("repeat_rows on a scalar");
  std::vector<std::size_t> rows;
  rows.reserve(a.dim(0) * times);
  for (std::size_t r = 0; r < a.dim(0); ++r) {
    for (std::size_t k = 0; k < times; ++k) rows.push_back(r);
  }
  return gather_rows(a, rows);
}

Tensor detach(const Tensor& a) {
  return Tensor(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape()) throw ShapeError(pair_msg("straight_through", soft.shape(), hard.shape()));
  std::vector<double> out(hard.values().begin(), hard.values().end());
  if (!should_record({&soft})) return Tensor(hard.shape(), std::move(out));
  NodePtr sn = soft.node();
  return custom_op(hard.shape(), std::move(out), {soft}, [sn](std::span<const double> g) {
    auto gs = sn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
  });
}

}  // namespace iwadv::ad
