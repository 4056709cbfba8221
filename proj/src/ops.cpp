// SPDX-License-Identifier: Apache-2.0

#include "gret/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gret/kernels.hpp"

namespace gret::ops {

using autodiff::grad_of;
using autodiff::make_result;

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Flat index into `src` for every element of a broadcast result of `out` shape.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t offset = out.size() - src.size();
  const auto src_strides = strides_of(src);
  std::vector<std::size_t> eff(out.size(), 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    eff[offset + i] = src[i] == 1 ? 0 : src_strides[i];
  }
  const std::size_t n = numel_of(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t flat = 0;
  for (std::size_t o = 0; o < n; ++o) {
    index[o] = flat;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      ++counter[ax];
      flat += eff[ax];
      if (counter[ax] < out[ax]) break;
      flat -= eff[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

struct BinaryPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;  // filled only when shapes differ
};

BinaryPlan plan_binary(const char* op, const Tensor& a, const Tensor& b) {
  BinaryPlan plan;
  if (a.shape() == b.shape()) {
    plan.out = a.shape();
    plan.same = true;
    return plan;
  }
  plan.out = broadcast_shape(op, a.shape(), b.shape());
  plan.ia = broadcast_index(a.shape(), plan.out);
  plan.ib = broadcast_index(b.shape(), plan.out);
  return plan;
}

// Elementwise binary op with derivative callbacks da(x, y, z), db(x, y, z)
// where z = f(x, y).
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto plan = std::make_shared<BinaryPlan>(plan_binary(op, a, b));
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t n = numel_of(plan->out);
  std::vector<double> out(n);
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[plan->ia[i]], y[plan->ib[i]]);
  }
  Shape shape = plan->out;
  return make_result(
      std::move(shape), std::move(out), {a, b},
      [plan, da, db](const TensorImpl& o, std::span<const ImplPtr> in) {
        const auto& g = o.grad;
        const auto& x = in[0]->data;
        const auto& y = in[1]->data;
        auto ga = grad_of(in[0]);
        auto gb = grad_of(in[1]);
        const std::size_t n = g.size();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = plan->same ? i : plan->ia[i];
          const std::size_t ib = plan->same ? i : plan->ib[i];
          if (!ga.empty()) ga[ia] += g[i] * da(x[ia], y[ib], o.data[i]);
          if (!gb.empty()) gb[ib] += g[i] * db(x[ia], y[ib], o.data[i]);
        }
      });
}

// Elementwise unary op; d(x, y) is dy/dx given input x and output y.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D d) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [d](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       if (ga.empty()) return;
                       const auto& x = in[0]->data;
                       for (std::size_t i = 0; i < ga.size(); ++i) {
                         ga[i] += o.grad[i] * d(x[i], o.data[i]);
                       }
                     });
}

// Decomposes `shape` around `axis` into outer * extent * inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to the first operand.
  return binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm({.m = m, .n = n, .k = k, .a = a.data().data(), .b = b.data().data(),
                 .c = out.data()});
  return make_result({m, n}, std::move(out), {a, b},
                     [m, n, k](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (auto ga = grad_of(in[0]); !ga.empty()) {
                         kernels::gemm({.trans_b = kernels::Trans::kYes, .m = m, .n = k, .k = n,
                                        .a = o.grad.data(), .b = in[1]->data.data(),
                                        .c = ga.data(), .accumulate = true});
                       }
                       if (auto gb = grad_of(in[1]); !gb.empty()) {
                         kernels::gemm({.trans_a = kernels::Trans::kYes, .m = k, .n = n, .k = m,
                                        .a = in[0]->data.data(), .b = o.grad.data(),
                                        .c = gb.data(), .accumulate = true});
                       }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_fail("bmm", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t t = 0; t < batch; ++t) {
    kernels::gemm({.m = m, .n = n, .k = k, .a = a.data().data() + t * m * k,
                   .b = b.data().data() + t * k * n, .c = out.data() + t * m * n});
  }
  return make_result(
      {batch, m, n}, std::move(out), {a, b},
      [batch, m, n, k](const TensorImpl& o, std::span<const ImplPtr> in) {
        auto ga = grad_of(in[0]);
        auto gb = grad_of(in[1]);
        for (std::size_t t = 0; t < batch; ++t) {
          const double* g = o.grad.data() + t * m * n;
          if (!ga.empty()) {
            kernels::gemm({.trans_b = kernels::Trans::kYes, .m = m, .n = k, .k = n, .a = g,
                           .b = in[1]->data.data() + t * k * n, .c = ga.data() + t * m * k,
                           .accumulate = true});
          }
          if (!gb.empty()) {
            kernels::gemm({.trans_a = kernels::Trans::kYes, .m = k, .n = n, .k = m,
                           .a = in[0]->data.data() + t * m * k, .b = g,
                           .c = gb.data() + t * k * n, .accumulate = true});
          }
        }
      });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    shape_fail("affine", x.shape(), w.shape());
  }
  const std::size_t in = w.dim(0), outw = w.dim(1), rows = x.numel() / in;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outw)) {
    shape_fail("affine(bias)", w.shape(), bias.shape());
  }
  std::vector<double> out(rows * outw);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), out.begin() + r * outw);
  }
  kernels::gemm({.m = rows, .n = outw, .k = in, .a = x.data().data(), .b = w.data().data(),
                 .c = out.data(), .accumulate = bias.defined()});
  Shape shape = x.shape();
  shape.back() = outw;
  return make_result(
      std::move(shape), std::move(out), {x, w, bias},
      [rows, in, outw](const TensorImpl& o, std::span<const ImplPtr> inp) {
        if (auto gx = grad_of(inp[0]); !gx.empty()) {
          kernels::gemm({.trans_b = kernels::Trans::kYes, .m = rows, .n = in, .k = outw,
                         .a = o.grad.data(), .b = inp[1]->data.data(), .c = gx.data(),
                         .accumulate = true});
        }
        if (auto gw = grad_of(inp[1]); !gw.empty()) {
          kernels::gemm({.trans_a = kernels::Trans::kYes, .m = in, .n = outw, .k = rows,
                         .a = inp[0]->data.data(), .b = o.grad.data(), .c = gw.data(),
                         .accumulate = true});
        }
        if (auto gb = grad_of(inp[2]); !gb.empty()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < outw; ++j) gb[j] += o.grad[r * outw + j];
          }
        }
      });
}

Tensor sum(const Tensor& a) {
  const auto x = a.data();
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  return make_result({1}, {total}, {a}, [](const TensorImpl& o, std::span<const ImplPtr> in) {
    auto ga = grad_of(in[0]);
    for (auto& g : ga) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  if (axis >= a.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(a.shape()));
  const auto s = split_at(a.shape(), axis);
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = x.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<long>(axis));
    if (shape.empty()) shape = {1};
  }
  return make_result(std::move(shape), std::move(out), {a},
                     [s](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       if (ga.empty()) return;
                       for (std::size_t q = 0; q < s.outer; ++q) {
                         for (std::size_t e = 0; e < s.extent; ++e) {
                           double* dst = ga.data() + (q * s.extent + e) * s.inner;
                           const double* src = o.grad.data() + q * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  const double extent = static_cast<double>(a.dim(axis));
  return scale(sum_axis(a, axis, keepdim), 1.0 / extent);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& in_shape = a.shape();
  if (axes.size() != in_shape.size()) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(in_shape));
  }
  std::vector<bool> seen(axes.size(), false);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size() || seen[axes[i]]) {
      throw ShapeError("permute: invalid axis order for " + shape_str(in_shape));
    }
    seen[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  const auto in_strides = strides_of(in_shape);
  Shape permuted_strides(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) permuted_strides[i] = in_strides[axes[i]];
  const std::size_t n = a.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(axes.size(), 0);
  std::size_t flat = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*src)[o] = flat;
    for (std::size_t ax = axes.size(); ax-- > 0;) {
      ++counter[ax];
      flat += permuted_strides[ax];
      if (counter[ax] < out_shape[ax]) break;
      flat -= permuted_strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  const auto x = a.data();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = x[(*src)[o]];
  return make_result(std::move(out_shape), std::move(out), {a},
                     [src](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       if (ga.empty()) return;
                       for (std::size_t i = 0; i < o.grad.size(); ++i) ga[(*src)[i]] += o.grad[i];
                     });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (broadcast_shape("broadcast_to", a.shape(), shape) != shape) {
    shape_fail("broadcast_to", a.shape(), shape);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), shape));
  const auto x = a.data();
  std::vector<double> out(idx->size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x[(*idx)[o]];
  return make_result(shape, std::move(out), {a},
                     [idx](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       if (ga.empty()) return;
                       for (std::size_t i = 0; i < o.grad.size(); ++i) ga[(*idx)[i]] += o.grad[i];
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_fail("concat", first, s);
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const auto split = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto x = parts[p].data();
    const std::size_t chunk = extents[p] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(x.data() + o * chunk, chunk, out.data() + o * total * split.inner + offset);
    }
    offset += chunk;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [extents, split, total](const TensorImpl& o, std::span<const ImplPtr> in) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         const std::size_t chunk = extents[p] * split.inner;
                         if (auto g = grad_of(in[p]); !g.empty()) {
                           for (std::size_t q = 0; q < split.outer; ++q) {
                             const double* src = o.grad.data() + q * total * split.inner + offset;
                             for (std::size_t i = 0; i < chunk; ++i) g[q * chunk + i] += src[i];
                           }
                         }
                         offset += chunk;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  }
  const auto s = split_at(a.shape(), axis);
  const std::size_t width = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = width;
  const auto x = a.data();
  std::vector<double> out(s.outer * width * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + (o * s.extent + begin) * s.inner, width * s.inner,
                out.data() + o * width * s.inner);
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [s, begin, width](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       if (ga.empty()) return;
                       for (std::size_t q = 0; q < s.outer; ++q) {
                         double* dst = ga.data() + (q * s.extent + begin) * s.inner;
                         const double* src = o.grad.data() + q * width * s.inner;
                         for (std::size_t i = 0; i < width * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * width);
  const auto x = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[r]) + " out of range [0," +
                          std::to_string(rows) + ")");
    }
    std::copy_n(x.data() + static_cast<std::size_t>(ids[r]) * width, width, out.data() + r * width);
  }
  return make_result({ids.size(), width}, std::move(out), {table},
                     [idx, width](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto gt = grad_of(in[0]);
                       if (gt.empty()) return;
                       for (std::size_t r = 0; r < idx->size(); ++r) {
                         double* dst = gt.data() + static_cast<std::size_t>((*idx)[r]) * width;
                         const double* src = o.grad.data() + r * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

}  // namespace gret::ops
