// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

namespace paca {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
// std::allocator whose construct() default-initializes, so vector::resize
// skips the zero-fill. Op outputs that overwrite every element use this.
template <class T>
struct default_init_allocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  template <class U>
  void construct(U* ptr) noexcept(noexcept(::new (static_cast<void*>(ptr)) U)) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <class U, class... Args>
  void construct(U* ptr, Args&&... args) {
    ::new (static_cast<void*>(ptr)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

using TensorVec = std::vector<double, detail::default_init_allocator<double>>;

// Dense row-major double tensor with value semantics. All network math in
// this project runs in double precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor eye(std::int64_t n, double diag = 1.0);
  // Allocation without the zero-fill; every element must be written before use.
  static Tensor uninit(Shape shape);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(std::initializer_list<std::int64_t> idx);
  double at(std::initializer_list<std::int64_t> idx) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  const TensorVec& vec() const { return data_; }
  TensorVec& vec() { return data_; }

 private:
  Shape shape_;
  TensorVec data_;
};

// ---- plain (non-differentiable) tensor utilities ----

Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

void clamp_(Tensor& t, double lo, double hi);
Tensor sign_tensor(const Tensor& t);
double max_abs(const Tensor& t);
double sum(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);

// argmax over the last axis of a [N, M] tensor; ties break to the lowest
// index.
std::vector<std::int64_t> argmax_rows(const Tensor& t);
std::int64_t argmax_vec(const double* v, std::int64_t n);

// Slices sample `i` out of a batched [N, ...] tensor.
Tensor slice_sample(const Tensor& batch, std::int64_t i);
// Writes `sample` into slot `i` of a batched tensor.
void set_sample(Tensor& batch, std::int64_t i, const Tensor& sample);
// Stacks equally shaped samples into a [N, ...] tensor.
Tensor stack_samples(const std::vector<Tensor>& samples);
// Gathers the given sample indices of a batched tensor into a new batch.
Tensor gather_samples(const Tensor& batch, const std::vector<std::int64_t>& idx);

}  // namespace paca
