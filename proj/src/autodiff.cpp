// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unordered_map>
#include <utility>

#include "paca/error.hpp"

namespace paca {
namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.val().same_shape(b.val())) {
    throw InvalidInputError(std::string(op) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
Tensor map1(const Tensor& a, F f) {
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, F f) {
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

// Backward helper for ops whose derivative is written in terms of the
// forward output: reuse the cached value in plain backward passes, rebuild
// the op when a differentiable graph is requested.
template <class Rebuild>
Var output_for_backward(const Tensor& cached, Rebuild rebuild) {
  if (grad_enabled()) return rebuild();
  return Var::constant(cached);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enable) : prev_(g_grad_enabled) {
  g_grad_enabled = enable;
}
GradModeGuard::~GradModeGuard() { g_grad_enabled = prev_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_op(Tensor out, std::vector<Var> parents, BackwardFn backward, const char* op) {
  bool need = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) need = need || p.requires_grad();
  }
  Var v(std::move(out), need);
  if (need) {
    v.node()->parents = std::move(parents);
    v.node()->backward = std::move(backward);
    v.node()->op = op;
  }
  return v;
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(map2(a.val(), b.val(), [](double x, double y) { return x + y; }),
                 {a, b},
                 [](const Var& d) { return std::vector<Var>{d, d}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(map2(a.val(), b.val(), [](double x, double y) { return x - y; }),
                 {a, b},
                 [](const Var& d) { return std::vector<Var>{d, neg(d)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(map2(a.val(), b.val(), [](double x, double y) { return x * y; }),
                 {a, b},
                 [a, b](const Var& d) {
                   return std::vector<Var>{mul(d, b), mul(d, a)};
                 },
                 "mul");
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  return make_op(map2(a.val(), b.val(), [](double x, double y) { return x / y; }),
                 {a, b},
                 [a, b](const Var& d) {
                   Var da = div(d, b);
                   Var db = neg(div(mul(d, a), mul(b, b)));
                   return std::vector<Var>{da, db};
                 },
                 "div");
}

Var neg(const Var& a) {
  return make_op(map1(a.val(), [](double x) { return -x; }), {a},
                 [](const Var& d) { return std::vector<Var>{neg(d)}; }, "neg");
}

Var adds(const Var& a, double s) {
  return make_op(map1(a.val(), [s](double x) { return x + s; }), {a},
                 [](const Var& d) { return std::vector<Var>{d}; }, "adds");
}

Var muls(const Var& a, double s) {
  return make_op(map1(a.val(), [s](double x) { return x * s; }), {a},
                 [s](const Var& d) { return std::vector<Var>{muls(d, s)}; }, "muls");
}

Var vexp(const Var& a) {
  Tensor out = map1(a.val(), [](double x) { return std::exp(x); });
  Tensor cached = out;
  return make_op(std::move(out), {a},
                 [a, cached](const Var& d) {
                   Var y = output_for_backward(cached, [&] { return vexp(a); });
                   return std::vector<Var>{mul(d, y)};
                 },
                 "exp");
}

Var vlog(const Var& a) {
  return make_op(map1(a.val(), [](double x) { return std::log(x); }), {a},
                 [a](const Var& d) { return std::vector<Var>{div(d, a)}; }, "log");
}

Var vtanh(const Var& a) {
  Tensor out = map1(a.val(), [](double x) { return std::tanh(x); });
  Tensor cached = out;
  return make_op(std::move(out), {a},
                 [a, cached](const Var& d) {
                   Var y = output_for_backward(cached, [&] { return vtanh(a); });
                   // d * (1 - y^2)
                   return std::vector<Var>{mul(d, adds(neg(mul(y, y)), 1.0))};
                 },
                 "tanh");
}

Var vsqrt(const Var& a) {
  Tensor out = map1(a.val(), [](double x) { return std::sqrt(x); });
  Tensor cached = out;
  return make_op(std::move(out), {a},
                 [a, cached](const Var& d) {
                   Var y = output_for_backward(cached, [&] { return vsqrt(a); });
                   return std::vector<Var>{div(muls(d, 0.5), y)};
                 },
                 "sqrt");
}

Var relu(const Var& a) {
  Tensor mask = Tensor::uninit(a.shape());
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < a.val().size(); ++i) {
    const bool pos = pa[i] > 0.0;
    mask[i] = pos ? 1.0 : 0.0;
    out[i] = pos ? pa[i] : 0.0;
  }
  return make_op(std::move(out), {a},
                 [mask](const Var& d) {
                   return std::vector<Var>{mul(d, Var::constant(mask))};
                 },
                 "relu");
}

Var vabs(const Var& a) {
  Tensor sgn = Tensor::uninit(a.shape());
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < a.val().size(); ++i) {
    const double v = pa[i];
    sgn[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    out[i] = std::abs(v);
  }
  return make_op(std::move(out), {a},
                 [sgn](const Var& d) {
                   return std::vector<Var>{mul(d, Var::constant(sgn))};
                 },
                 "abs");
}

// ---- shape ----

Var reshape(const Var& a, Shape shape) {
  Shape orig = a.shape();
  return make_op(a.val().reshaped(shape), {a},
                 [orig](const Var& d) {
                   return std::vector<Var>{reshape(d, orig)};
                 },
                 "reshape");
}

namespace {
Tensor permute_tensor(const Tensor& a, const std::vector<int>& perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw InvalidInputError("permute: rank mismatch");
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  Tensor out = Tensor::uninit(out_shape);
  // strides of input
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * a.dim(i + 1);
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) src_stride[i] = in_stride[perm[i]];
  double* po = out.data();
  const double* pa = a.data();
  if (r == 4) {
    const std::int64_t d0 = out_shape[0], d1 = out_shape[1], d2 = out_shape[2],
                       d3 = out_shape[3];
    const std::int64_t s0 = src_stride[0], s1 = src_stride[1], s2 = src_stride[2],
                       s3 = src_stride[3];
    std::int64_t flat = 0;
    for (std::int64_t i0 = 0; i0 < d0; ++i0) {
      for (std::int64_t i1 = 0; i1 < d1; ++i1) {
        for (std::int64_t i2 = 0; i2 < d2; ++i2) {
          const double* src = pa + i0 * s0 + i1 * s1 + i2 * s2;
          for (std::int64_t i3 = 0; i3 < d3; ++i3) {
            po[flat++] = src[i3 * s3];
          }
        }
      }
    }
    return out;
  }
  // generic rank
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const std::int64_t n = out.size();
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    po[flat] = pa[src];
    for (int i = r - 1; i >= 0; --i) {
      idx[i]++;
      src += src_stride[i];
      if (idx[i] < out_shape[i]) break;
      src -= src_stride[i] * out_shape[i];
      idx[i] = 0;
    }
  }
  return out;
}
}  // namespace

Var permute(const Var& a, const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return make_op(permute_tensor(a.val(), perm), {a},
                 [inv](const Var& d) {
                   return std::vector<Var>{permute(d, inv)};
                 },
                 "permute");
}

Var transpose2d(const Var& a) { return permute(a, {1, 0}); }

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
  if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().dim(1) != b.val().dim(0)) {
    throw InvalidInputError("matmul: incompatible shapes " + shape_str(a.shape()) +
                            " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.val().dim(0), k = a.val().dim(1), n = b.val().dim(1);
  Tensor out = Tensor::uninit(Shape{m, n});
  CMap am(a.val().data(), m, k);
  CMap bm(b.val().data(), k, n);
  MMap om(out.data(), m, n);
  om.noalias() = am * bm;
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& d) {
                   Var da = matmul(d, transpose2d(b));
                   Var db = matmul(transpose2d(a), d);
                   return std::vector<Var>{da, db};
                 },
                 "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().dim(1) != b.val().dim(1)) {
    throw InvalidInputError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                            " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.val().dim(0), k = a.val().dim(1), n = b.val().dim(0);
  Tensor out = Tensor::uninit(Shape{m, n});
  CMap am(a.val().data(), m, k);
  CMap bm(b.val().data(), n, k);
  MMap om(out.data(), m, n);
  om.noalias() = am * bm.transpose();
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& d) {
                   return std::vector<Var>{matmul(d, b), matmul_tn(d, a)};
                 },
                 "matmul_nt");
}

Var matmul_tn(const Var& a, const Var& b) {
  if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().dim(0) != b.val().dim(0)) {
    throw InvalidInputError("matmul_tn: incompatible shapes " + shape_str(a.shape()) +
                            " x " + shape_str(b.shape()));
  }
  const std::int64_t k = a.val().dim(0), m = a.val().dim(1), n = b.val().dim(1);
  Tensor out = Tensor::uninit(Shape{m, n});
  CMap am(a.val().data(), k, m);
  CMap bm(b.val().data(), k, n);
  MMap om(out.data(), m, n);
  om.noalias() = am.transpose() * bm;
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& d) {
                   return std::vector<Var>{matmul_nt(b, d), matmul(a, d)};
                 },
                 "matmul_tn");
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(1)) {
    throw InvalidInputError("bmm: incompatible shapes " + shape_str(A.shape()) +
                            " x " + shape_str(B.shape()));
  }
  const std::int64_t nb = A.dim(0), m = A.dim(1), k = A.dim(2), n = B.dim(2);
  Tensor out = Tensor::uninit(Shape{nb, m, n});
  for (std::int64_t i = 0; i < nb; ++i) {
    CMap am(A.data() + i * m * k, m, k);
    CMap bmv(B.data() + i * k * n, k, n);
    MMap om(out.data() + i * m * n, m, n);
    om.noalias() = am * bmv;
  }
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& d) {
                   Var da = bmm(d, permute(b, {0, 2, 1}));
                   Var db = bmm(permute(a, {0, 2, 1}), d);
                   return std::vector<Var>{da, db};
                 },
                 "bmm");
}

// ---- reductions / broadcasts ----

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(sum(a.val()));
  Shape shape = a.shape();
  return make_op(std::move(out), {a},
                 [shape](const Var& d) {
                   return std::vector<Var>{expand_scalar(d, shape)};
                 },
                 "sum_all");
}

Var expand_scalar(const Var& s, Shape shape) {
  if (s.val().size() != 1) throw InvalidInputError("expand_scalar: input not scalar");
  Tensor out = Tensor::uninit(shape);
  std::fill(out.data(), out.data() + out.size(), s.val()[0]);
  return make_op(std::move(out), {s},
                 [](const Var& d) { return std::vector<Var>{sum_all(d)}; },
                 "expand_scalar");
}

Var sum_rows(const Var& a) {
  if (a.val().rank() != 2) throw InvalidInputError("sum_rows expects rank-2");
  const std::int64_t n = a.val().dim(0), m = a.val().dim(1);
  Tensor out = Tensor::uninit(Shape{n});
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < m; ++j) s += pa[i * m + j];
    out[i] = s;
  }
  return make_op(std::move(out), {a},
                 [m](const Var& d) { return std::vector<Var>{expand_cols(d, m)}; },
                 "sum_rows");
}

Var expand_cols(const Var& v, std::int64_t m) {
  if (v.val().rank() != 1) throw InvalidInputError("expand_cols expects rank-1");
  const std::int64_t n = v.val().dim(0);
  Tensor out = Tensor::uninit(Shape{n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = v.val()[i];
    for (std::int64_t j = 0; j < m; ++j) out[i * m + j] = x;
  }
  return make_op(std::move(out), {v},
                 [](const Var& d) { return std::vector<Var>{sum_rows(d)}; },
                 "expand_cols");
}

Var sum_cols(const Var& a) {
  if (a.val().rank() != 2) throw InvalidInputError("sum_cols expects rank-2");
  const std::int64_t n = a.val().dim(0), m = a.val().dim(1);
  Tensor out(Shape{m});
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) out[j] += pa[i * m + j];
  }
  return make_op(std::move(out), {a},
                 [n](const Var& d) { return std::vector<Var>{expand_rows(d, n)}; },
                 "sum_cols");
}

Var expand_rows(const Var& v, std::int64_t n) {
  if (v.val().rank() != 1) throw InvalidInputError("expand_rows expects rank-1");
  const std::int64_t m = v.val().dim(0);
  Tensor out = Tensor::uninit(Shape{n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) out[i * m + j] = v.val()[j];
  }
  return make_op(std::move(out), {v},
                 [](const Var& d) { return std::vector<Var>{sum_cols(d)}; },
                 "expand_rows");
}

Var channel_sum(const Var& a) {
  if (a.val().rank() != 4) throw InvalidInputError("channel_sum expects rank-4");
  const std::int64_t n = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2),
                     w = a.val().dim(3);
  Tensor out(Shape{c});
  const double* pa = a.val().data();
  const std::int64_t hw = h * w;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      double s = 0.0;
      const double* p = pa + (i * c + j) * hw;
      for (std::int64_t k = 0; k < hw; ++k) s += p[k];
      out[j] += s;
    }
  }
  return make_op(std::move(out), {a},
                 [n, h, w](const Var& d) {
                   return std::vector<Var>{channel_expand(d, n, h, w)};
                 },
                 "channel_sum");
}

Var channel_expand(const Var& v, std::int64_t n, std::int64_t h, std::int64_t w) {
  if (v.val().rank() != 1) throw InvalidInputError("channel_expand expects rank-1");
  const std::int64_t c = v.val().dim(0);
  Tensor out = Tensor::uninit(Shape{n, c, h, w});
  const std::int64_t hw = h * w;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      double* p = out.data() + (i * c + j) * hw;
      const double x = v.val()[j];
      for (std::int64_t k = 0; k < hw; ++k) p[k] = x;
    }
  }
  return make_op(std::move(out), {v},
                 [](const Var& d) { return std::vector<Var>{channel_sum(d)}; },
                 "channel_expand");
}

Var channel_affine(const Var& x, const Var& scale, const Var& shift) {
  const Tensor& xt = x.val();
  if (xt.rank() != 4) throw InvalidInputError("channel_affine expects [N,C,H,W]");
  const std::int64_t n = xt.dim(0), c = xt.dim(1), hw = xt.dim(2) * xt.dim(3);
  if (scale.val().size() != c || shift.val().size() != c) {
    throw InvalidInputError("channel_affine: scale/shift must be [C]");
  }
  Tensor out = Tensor::uninit(xt.shape());
  const double* px = xt.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      const double s = scale.val()[j], b = shift.val()[j];
      const double* src = px + (i * c + j) * hw;
      double* dst = po + (i * c + j) * hw;
      for (std::int64_t k = 0; k < hw; ++k) dst[k] = src[k] * s + b;
    }
  }
  const std::int64_t cc = c;
  return make_op(std::move(out), {x, scale, shift},
                 [x, scale, cc](const Var& d) {
                   Var zero = Var::constant(Tensor::zeros(Shape{cc}));
                   Var dx = channel_affine(d, scale, zero);
                   Var dscale = channel_sum(mul(d, x));
                   Var dshift = channel_sum(d);
                   return std::vector<Var>{dx, dscale, dshift};
                 },
                 "channel_affine");
}

Var sum_keep_batch(const Var& a) {
  if (a.val().rank() < 2) throw InvalidInputError("sum_keep_batch expects rank>=2");
  const std::int64_t n = a.val().dim(0);
  const std::int64_t stride = a.val().size() / n;
  Tensor out = Tensor::uninit(Shape{n});
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t k = 0; k < stride; ++k) s += pa[i * stride + k];
    out[i] = s;
  }
  Shape shape = a.shape();
  return make_op(std::move(out), {a},
                 [shape](const Var& d) {
                   return std::vector<Var>{batch_expand(d, shape)};
                 },
                 "sum_keep_batch");
}

Var batch_expand(const Var& v, Shape shape) {
  if (v.val().rank() != 1 || shape.empty() || v.val().dim(0) != shape[0]) {
    throw InvalidInputError("batch_expand: leading dimension mismatch");
  }
  const std::int64_t n = shape[0];
  const std::int64_t stride = numel(shape) / n;
  Tensor out = Tensor::uninit(shape);
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = v.val()[i];
    double* p = out.data() + i * stride;
    for (std::int64_t k = 0; k < stride; ++k) p[k] = x;
  }
  return make_op(std::move(out), {v},
                 [](const Var& d) { return std::vector<Var>{sum_keep_batch(d)}; },
                 "batch_expand");
}

// ---- indexing ----

Var take_per_row(const Var& a, std::vector<std::int64_t> idx) {
  if (a.val().rank() != 2) throw InvalidInputError("take_per_row expects rank-2");
  const std::int64_t n = a.val().dim(0), m = a.val().dim(1);
  if (static_cast<std::int64_t>(idx.size()) != n) {
    throw InvalidInputError("take_per_row: index count mismatch");
  }
  Tensor out(Shape{n});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t j = idx[static_cast<std::size_t>(i)];
    if (j < 0 || j >= m) throw InvalidInputError("take_per_row: index out of range");
    out[i] = a.val()[i * m + j];
  }
  return make_op(std::move(out), {a},
                 [idx, m](const Var& d) {
                   return std::vector<Var>{scatter_per_row(d, idx, m)};
                 },
                 "take_per_row");
}

Var scatter_per_row(const Var& v, std::vector<std::int64_t> idx, std::int64_t m) {
  if (v.val().rank() != 1) throw InvalidInputError("scatter_per_row expects rank-1");
  const std::int64_t n = v.val().dim(0);
  Tensor out(Shape{n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    out[i * m + idx[static_cast<std::size_t>(i)]] = v.val()[i];
  }
  return make_op(std::move(out), {v},
                 [idx](const Var& d) {
                   return std::vector<Var>{take_per_row(d, idx)};
                 },
                 "scatter_per_row");
}

// ---- convolution building blocks ----

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                          std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace {
Tensor im2col_tensor(const Tensor& x, ConvGeom g) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_dim(h, g.kh, g.stride, g.pad);
  const std::int64_t ow = conv_out_dim(w, g.kw, g.stride, g.pad);
  const std::int64_t ckk = c * g.kh * g.kw;
  Tensor out = Tensor::uninit(Shape{n * oh * ow, ckk});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t in_n = 0; in_n < n; ++in_n) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xw = 0; xw < ow; ++xw) {
        double* row = po + ((in_n * oh + y) * ow + xw) * ckk;
        for (std::int64_t cc = 0; cc < c; ++cc) {
          const double* src = px + (in_n * c + cc) * h * w;
          for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            const std::int64_t sy = y * g.stride - g.pad + ky;
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const std::int64_t sx = xw * g.stride - g.pad + kx;
              double v = 0.0;
              if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = src[sy * w + sx];
              row[(cc * g.kh + ky) * g.kw + kx] = v;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor col2im_tensor(const Tensor& cols, const Shape& image_shape, ConvGeom g) {
  const std::int64_t n = image_shape[0], c = image_shape[1], h = image_shape[2],
                     w = image_shape[3];
  const std::int64_t oh = conv_out_dim(h, g.kh, g.stride, g.pad);
  const std::int64_t ow = conv_out_dim(w, g.kw, g.stride, g.pad);
  const std::int64_t ckk = c * g.kh * g.kw;
  if (cols.dim(0) != n * oh * ow || cols.dim(1) != ckk) {
    throw InvalidInputError("col2im: column shape mismatch");
  }
  Tensor out(image_shape);
  const double* pc = cols.data();
  for (std::int64_t in_n = 0; in_n < n; ++in_n) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xw = 0; xw < ow; ++xw) {
        const double* row = pc + ((in_n * oh + y) * ow + xw) * ckk;
        for (std::int64_t cc = 0; cc < c; ++cc) {
          double* dst = out.data() + (in_n * c + cc) * h * w;
          for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            const std::int64_t sy = y * g.stride - g.pad + ky;
            if (sy < 0 || sy >= h) continue;
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const std::int64_t sx = xw * g.stride - g.pad + kx;
              if (sx < 0 || sx >= w) continue;
              dst[sy * w + sx] += row[(cc * g.kh + ky) * g.kw + kx];
            }
          }
        }
      }
    }
  }
  return out;
}
}  // namespace

Var im2col(const Var& x, ConvGeom g) {
  if (x.val().rank() != 4) throw InvalidInputError("im2col expects [N,C,H,W]");
  Shape image_shape = x.shape();
  return make_op(im2col_tensor(x.val(), g), {x},
                 [image_shape, g](const Var& d) {
                   return std::vector<Var>{col2im(d, image_shape, g)};
                 },
                 "im2col");
}

Var col2im(const Var& cols, Shape image_shape, ConvGeom g) {
  return make_op(col2im_tensor(cols.val(), image_shape, g), {cols},
                 [g](const Var& d) {
                   return std::vector<Var>{im2col(d, g)};
                 },
                 "col2im");
}

// ---- triangular packing ----

Var triu_flatten(const Var& a) {
  if (a.val().rank() != 3 || a.val().dim(1) != a.val().dim(2)) {
    throw InvalidInputError("triu_flatten expects [N,C,C]");
  }
  const std::int64_t n = a.val().dim(0), c = a.val().dim(1);
  const std::int64_t t = c * (c + 1) / 2;
  Tensor out(Shape{n, t});
  const double* pa = a.val().data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t k = 0;
    for (std::int64_t r = 0; r < c; ++r) {
      for (std::int64_t cc = r; cc < c; ++cc) {
        out[i * t + k] = pa[(i * c + r) * c + cc];
        ++k;
      }
    }
  }
  return make_op(std::move(out), {a},
                 [c](const Var& d) { return std::vector<Var>{triu_expand(d, c)}; },
                 "triu_flatten");
}

Var triu_expand(const Var& v, std::int64_t c) {
  const std::int64_t t = c * (c + 1) / 2;
  if (v.val().rank() != 2 || v.val().dim(1) != t) {
    throw InvalidInputError("triu_expand: shape mismatch");
  }
  const std::int64_t n = v.val().dim(0);
  Tensor out(Shape{n, c, c});
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t k = 0;
    for (std::int64_t r = 0; r < c; ++r) {
      for (std::int64_t cc = r; cc < c; ++cc) {
        out[(i * c + r) * c + cc] = v.val()[i * t + k];
        ++k;
      }
    }
  }
  return make_op(std::move(out), {v},
                 [](const Var& d) { return std::vector<Var>{triu_flatten(d)}; },
                 "triu_expand");
}

// ---- backward driver ----

namespace {
void topo_visit(Node* node, std::vector<Node*>& order,
                std::vector<std::pair<Node*, std::size_t>>& stack,
                std::unordered_map<Node*, int>& state) {
  stack.emplace_back(node, 0);
  while (!stack.empty()) {
    auto& [cur, next_child] = stack.back();
    if (next_child == 0) {
      auto it = state.find(cur);
      if (it != state.end()) {
        stack.pop_back();
        continue;
      }
      state[cur] = 1;
    }
    if (next_child < cur->parents.size()) {
      Node* p = cur->parents[next_child].node();
      ++next_child;
      if (p && p->requires_grad && state.find(p) == state.end()) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }
}
}  // namespace

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      bool create_graph) {
  if (!output.defined()) throw InvalidInputError("grad: undefined output");
  std::vector<Node*> order;
  if (output.requires_grad()) {
    std::vector<std::pair<Node*, std::size_t>> stack;
    std::unordered_map<Node*, int> state;
    topo_visit(output.node(), order, stack, state);
  }

  std::unordered_map<Node*, Var> grads;
  {
    GradModeGuard guard(create_graph);
    grads[output.node()] = Var::constant(Tensor::ones(output.shape()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      auto git = grads.find(node);
      if (git == grads.end() || !node->backward) continue;
      const Var& gout = git->second;
      std::vector<Var> pgrads = node->backward(gout);
      if (pgrads.size() != node->parents.size()) {
        throw NumericError(std::string("backward of ") + node->op +
                           " returned wrong gradient count");
      }
      for (std::size_t i = 0; i < pgrads.size(); ++i) {
        Node* p = node->parents[i].node();
        if (!p || !p->requires_grad) continue;
        auto pit = grads.find(p);
        if (pit == grads.end()) {
          grads[p] = pgrads[i];
        } else {
          pit->second = add(pit->second, pgrads[i]);
        }
      }
    }
  }

  std::vector<Var> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.node());
    if (it != grads.end() && in.requires_grad()) {
      result.push_back(it->second);
    } else {
      result.push_back(Var::constant(Tensor::zeros(in.shape())));
    }
  }
  return result;
}

}  // namespace paca
