// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "paca/error.hpp"

namespace paca {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d < 0) throw InvalidInputError("negative dimension in shape " + shape_str(shape_));
  }
  data_.assign(static_cast<std::size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
  std::fill(data_.begin(), data_.end(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (numel(shape_) != static_cast<std::int64_t>(data.size())) {
    throw InvalidInputError("data size " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape_));
  }
  data_.assign(data.begin(), data.end());
}

Tensor Tensor::eye(std::int64_t n, double diag) {
  Tensor t(Shape{n, n});
  for (std::int64_t i = 0; i < n; ++i) t[i * n + i] = diag;
  return t;
}

Tensor Tensor::uninit(Shape shape) {
  Tensor t;
  t.shape_ = std::move(shape);
  for (auto d : t.shape_) {
    if (d < 0) throw InvalidInputError("negative dimension in shape " + shape_str(t.shape_));
  }
  t.data_.resize(static_cast<std::size_t>(numel(t.shape_)));
  return t;
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
  std::int64_t off = 0;
  std::size_t i = 0;
  for (auto v : idx) {
    off = off * shape_[i] + v;
    ++i;
  }
  return data_[static_cast<std::size_t>(off)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw InvalidInputError("reshape from " + shape_str(shape_) + " to " +
                            shape_str(shape) + " changes element count");
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

void clamp_(Tensor& t, double lo, double hi) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], lo, hi);
}

Tensor sign_tensor(const Tensor& t) {
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) {
    out[i] = t[i] > 0.0 ? 1.0 : (t[i] < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw InvalidInputError("dot: shape mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::int64_t argmax_vec(const double* v, std::int64_t n) {
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<std::int64_t> argmax_rows(const Tensor& t) {
  if (t.rank() != 2) throw InvalidInputError("argmax_rows expects a rank-2 tensor");
  const std::int64_t n = t.dim(0), m = t.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = argmax_vec(t.data() + i * m, m);
  }
  return out;
}

Tensor slice_sample(const Tensor& batch, std::int64_t i) {
  if (batch.rank() < 1) throw InvalidInputError("slice_sample on rank-0 tensor");
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  std::int64_t stride = numel(s);
  Tensor out(s);
  std::copy(batch.data() + i * stride, batch.data() + (i + 1) * stride, out.data());
  return out;
}

void set_sample(Tensor& batch, std::int64_t i, const Tensor& sample) {
  std::int64_t stride = sample.size();
  if (batch.size() < (i + 1) * stride) throw InvalidInputError("set_sample out of range");
  std::copy(sample.data(), sample.data() + stride, batch.data() + i * stride);
}

Tensor stack_samples(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw InvalidInputError("stack_samples: empty input");
  Shape s = samples.front().shape();
  Shape out_shape;
  out_shape.push_back(static_cast<std::int64_t>(samples.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape() != s) throw InvalidInputError("stack_samples: ragged shapes");
    set_sample(out, static_cast<std::int64_t>(i), samples[i]);
  }
  return out;
}

Tensor gather_samples(const Tensor& batch, const std::vector<std::int64_t>& idx) {
  Shape s = batch.shape();
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor out(s);
  const std::int64_t stride = batch.size() / batch.dim(0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(batch.data() + idx[i] * stride, batch.data() + (idx[i] + 1) * stride,
              out.data() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

}  // namespace paca
