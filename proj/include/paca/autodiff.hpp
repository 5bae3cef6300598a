// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "paca/tensor.hpp"

namespace paca {

// Reverse-mode autodiff over a dynamically built graph. Backward functions
// emit graph operations themselves, so grad(..., create_graph=true) yields
// gradients that can be differentiated again. The adaptive attack relies on
// this to differentiate through the confidence-gradient computation.

class Var;
using BackwardFn = std::function<std::vector<Var>(const Var&)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward;  // empty for leaves and constants
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var scalar(double v) { return Var(Tensor::scalar(v), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& val() const { return node_->value; }
  Tensor& val_mut() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

// Graph recording switch. While disabled, every op returns a constant node;
// grad() flips it to `create_graph` for the duration of the backward pass.
bool grad_enabled();
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enable);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};
struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

Var make_op(Tensor out, std::vector<Var> parents, BackwardFn backward, const char* op);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var adds(const Var& a, double s);
Var muls(const Var& a, double s);
Var vexp(const Var& a);
Var vlog(const Var& a);
Var vtanh(const Var& a);
Var vsqrt(const Var& a);
Var relu(const Var& a);
Var vabs(const Var& a);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var transpose2d(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);            // [m,k] x [k,n]
Var matmul_nt(const Var& a, const Var& b);         // [m,k] x [n,k]^T -> [m,n]
Var matmul_tn(const Var& a, const Var& b);         // [k,m]^T x [k,n] -> [m,n]
Var bmm(const Var& a, const Var& b);               // [N,a,b] x [N,b,c]

// ---- reductions / broadcasts (each pair is mutually adjoint) ----
Var sum_all(const Var& a);                         // -> [1]
Var expand_scalar(const Var& s, Shape shape);      // [1] -> shape
Var sum_rows(const Var& a);                        // [N,M] -> [N]
Var expand_cols(const Var& v, std::int64_t m);     // [N] -> [N,M]
Var sum_cols(const Var& a);                        // [N,M] -> [M]
Var expand_rows(const Var& v, std::int64_t n);     // [M] -> [N,M]
Var channel_sum(const Var& a);                     // [N,C,H,W] -> [C]
Var channel_expand(const Var& v, std::int64_t n, std::int64_t h, std::int64_t w);
// x * scale[c] + shift[c], broadcast per channel (fused batch-norm core)
Var channel_affine(const Var& x, const Var& scale, const Var& shift);
Var sum_keep_batch(const Var& a);                  // [N,...] -> [N]
Var batch_expand(const Var& v, Shape shape);       // [N] -> [N,...]

// ---- indexing ----
Var take_per_row(const Var& a, std::vector<std::int64_t> idx);  // [N,M] -> [N]
Var scatter_per_row(const Var& v, std::vector<std::int64_t> idx, std::int64_t m);

// ---- convolution building blocks ----
struct ConvGeom {
  std::int64_t kh = 3, kw = 3;
  std::int64_t stride = 1;
  std::int64_t pad = 1;
};
std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                          std::int64_t pad);
// [N,C,H,W] -> [N*OH*OW, C*kh*kw]
Var im2col(const Var& x, ConvGeom g);
// adjoint of im2col: [N*OH*OW, C*kh*kw] -> [N,C,H,W]
Var col2im(const Var& cols, Shape image_shape, ConvGeom g);

// ---- triangular packing (for covariance pooling) ----
Var triu_flatten(const Var& a);                    // [N,C,C] -> [N,C(C+1)/2]
Var triu_expand(const Var& v, std::int64_t c);     // adjoint

// Gradients of a scalar `output` with respect to `inputs`. When
// `create_graph` is set the returned Vars participate in the graph and can
// be differentiated again. Inputs that the output does not depend on get
// zero gradients.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      bool create_graph = false);

}  // namespace paca
