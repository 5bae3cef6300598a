// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "paca/autodiff.hpp"

namespace paca::nn {

struct NamedVar {
  std::string name;
  Var var;  // shares the underlying node with the owning layer
};
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

// ---- initializers ----
Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);
Tensor xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                      std::mt19937_64& rng);

// ---- layers ----

struct Conv2d {
  std::int64_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
  Var weight;  // [out_ch, in_ch*kernel*kernel]
  Var bias;    // [out_ch], undefined when bias-free

  Conv2d() = default;
  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
         std::int64_t stride, std::mt19937_64& rng, bool with_bias = false);
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedVar>& out);
};

struct BatchNorm2d {
  std::int64_t channels = 0;
  double momentum = 0.05;  // EMA update weight: new = (1-m)*old + m*batch
  double eps = 1e-5;
  bool training = false;
  Var gamma, beta;
  Tensor running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels, double momentum = 0.05);
  Var forward(const Var& x);
  void collect(const std::string& prefix, std::vector<NamedVar>& params,
               std::vector<NamedTensor>& buffers);
};

struct Linear {
  std::int64_t in_dim = 0, out_dim = 0;
  Var weight;  // [in_dim, out_dim]
  Var bias;    // [out_dim], undefined when bias-free

  Linear() = default;
  Linear(std::int64_t in_dim, std::int64_t out_dim, std::mt19937_64& rng,
         bool with_bias);
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedVar>& out);
};

// Two 3x3 convolutions with batch norm; identity shortcut, or a 1x1
// projection when channels/stride change. Downsampling happens in conv1 via
// its stride, never by pooling.
struct ResidualBlock {
  std::int64_t in_ch = 0, out_ch = 0, stride = 1;
  bool use_shortcut = true;
  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  std::optional<Conv2d> proj;
  std::optional<BatchNorm2d> proj_bn;

  ResidualBlock() = default;
  ResidualBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride,
                bool use_shortcut, double bn_momentum, std::mt19937_64& rng);
  Var forward(const Var& x);
  bool has_add_junction() const { return use_shortcut; }
  void set_training(bool on);
  void collect(const std::string& prefix, std::vector<NamedVar>& params,
               std::vector<NamedTensor>& buffers);
};

// Global average pooling [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);

// ---- losses ----

// Per-sample cross-entropy of `logits` [N,n] against integer labels,
// computed via max-shifted log-sum-exp. Returns [N].
Var cross_entropy_per_sample(const Var& logits, const std::vector<std::int64_t>& labels);
Var cross_entropy_sum(const Var& logits, const std::vector<std::int64_t>& labels);
Var cross_entropy_mean(const Var& logits, const std::vector<std::int64_t>& labels);

// ---- optimizers ----

class AdamFamily {
 public:
  AdamFamily(std::vector<Var> params, double lr, bool infinity_norm,
             double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<Var>& grads);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  bool infinity_norm_;
  long t_ = 0;
};

// Adam: second moment is an EMA of squared gradients.
class Adam : public AdamFamily {
 public:
  Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : AdamFamily(std::move(params), lr, false, beta1, beta2, eps) {}
};

// Adamax: second moment is an exponentially weighted infinity norm.
class Adamax : public AdamFamily {
 public:
  Adamax(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
      : AdamFamily(std::move(params), lr, true, beta1, beta2, eps) {}
};

}  // namespace paca::nn
