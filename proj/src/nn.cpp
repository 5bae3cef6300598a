// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/nn.hpp"

#include <algorithm>
#include <cmath>

#include "paca/error.hpp"

namespace paca::nn {

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                      std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// ---- Conv2d ----

Conv2d::Conv2d(std::int64_t in_ch_, std::int64_t out_ch_, std::int64_t kernel_,
               std::int64_t stride_, std::mt19937_64& rng, bool with_bias)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_),
      pad(kernel_ / 2) {
  const std::int64_t fan_in = in_ch * kernel * kernel;
  weight = Var(kaiming_uniform(Shape{out_ch, fan_in}, fan_in, rng), true);
  if (with_bias) bias = Var(Tensor::zeros(Shape{out_ch}), true);
}

Var Conv2d::forward(const Var& x) const {
  if (x.val().rank() != 4 || x.val().dim(1) != in_ch) {
    throw InvalidInputError("Conv2d: bad input shape " + shape_str(x.shape()));
  }
  const std::int64_t n = x.val().dim(0);
  const std::int64_t oh = conv_out_dim(x.val().dim(2), kernel, stride, pad);
  const std::int64_t ow = conv_out_dim(x.val().dim(3), kernel, stride, pad);
  ConvGeom g{kernel, kernel, stride, pad};
  Var cols = im2col(x, g);                          // [N*OH*OW, CKK]
  Var out2d = matmul_nt(cols, weight);              // [N*OH*OW, OC]
  if (bias.defined()) out2d = add(out2d, expand_rows(bias, n * oh * ow));
  return permute(reshape(out2d, Shape{n, oh, ow, out_ch}), {0, 3, 1, 2});
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedVar>& out) {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(std::int64_t channels_, double momentum_)
    : channels(channels_), momentum(momentum_) {
  gamma = Var(Tensor::ones(Shape{channels}), true);
  beta = Var(Tensor::zeros(Shape{channels}), true);
  running_mean = Tensor::zeros(Shape{channels});
  running_var = Tensor::ones(Shape{channels});
}

Var BatchNorm2d::forward(const Var& x) {
  if (x.val().rank() != 4 || x.val().dim(1) != channels) {
    throw InvalidInputError("BatchNorm2d: bad input shape " + shape_str(x.shape()));
  }
  const std::int64_t n = x.val().dim(0), h = x.val().dim(2), w = x.val().dim(3);
  const double cnt = static_cast<double>(n * h * w);
  if (training) {
    // batch statistics: biased variance via E[x^2] - E[x]^2
    Var mean = muls(channel_sum(x), 1.0 / cnt);
    Var ex2 = muls(channel_sum(mul(x, x)), 1.0 / cnt);
    Var var = sub(ex2, mul(mean, mean));
    Var invstd = div(Var::constant(Tensor::ones(Shape{channels})),
                     vsqrt(adds(var, eps)));
    // y = (x - mean) * invstd * gamma + beta, folded into one affine pass
    Var scale = mul(gamma, invstd);
    Var shift = sub(beta, mul(mean, scale));
    // EMA with update weight `momentum`
    for (std::int64_t c = 0; c < channels; ++c) {
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean.val()[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var.val()[c];
    }
    return channel_affine(x, scale, shift);
  }
  Tensor invstd = Tensor::uninit(Shape{channels});
  for (std::int64_t c = 0; c < channels; ++c) {
    invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
  }
  Var scale = mul(gamma, Var::constant(invstd));
  Var shift = sub(beta, mul(Var::constant(running_mean), scale));
  return channel_affine(x, scale, shift);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedVar>& params,
                          std::vector<NamedTensor>& buffers) {
  params.push_back({prefix + ".gamma", gamma});
  params.push_back({prefix + ".beta", beta});
  buffers.push_back({prefix + ".running_mean", &running_mean});
  buffers.push_back({prefix + ".running_var", &running_var});
}

// ---- Linear ----

Linear::Linear(std::int64_t in_dim_, std::int64_t out_dim_, std::mt19937_64& rng,
               bool with_bias)
    : in_dim(in_dim_), out_dim(out_dim_) {
  weight = Var(xavier_uniform(Shape{in_dim, out_dim}, in_dim, out_dim, rng), true);
  if (with_bias) bias = Var(Tensor::zeros(Shape{out_dim}), true);
}

Var Linear::forward(const Var& x) const {
  if (x.val().rank() != 2 || x.val().dim(1) != in_dim) {
    throw InvalidInputError("Linear: bad input shape " + shape_str(x.shape()));
  }
  Var out = matmul(x, weight);
  if (bias.defined()) out = add(out, expand_rows(bias, x.val().dim(0)));
  return out;
}

void Linear::collect(const std::string& prefix, std::vector<NamedVar>& out) {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

// ---- ResidualBlock ----

ResidualBlock::ResidualBlock(std::int64_t in_ch_, std::int64_t out_ch_,
                             std::int64_t stride_, bool use_shortcut_,
                             double bn_momentum, std::mt19937_64& rng)
    : in_ch(in_ch_), out_ch(out_ch_), stride(stride_), use_shortcut(use_shortcut_) {
  conv1 = Conv2d(in_ch, out_ch, 3, stride, rng);
  conv2 = Conv2d(out_ch, out_ch, 3, 1, rng);
  bn1 = BatchNorm2d(out_ch, bn_momentum);
  bn2 = BatchNorm2d(out_ch, bn_momentum);
  if (use_shortcut && (stride != 1 || in_ch != out_ch)) {
    proj = Conv2d(in_ch, out_ch, 1, stride, rng);
    proj_bn = BatchNorm2d(out_ch, bn_momentum);
  }
}

Var ResidualBlock::forward(const Var& x) {
  Var h = relu(bn1.forward(conv1.forward(x)));
  h = bn2.forward(conv2.forward(h));
  if (use_shortcut) {
    Var s = x;
    if (proj) s = proj_bn->forward(proj->forward(x));
    h = add(h, s);
  }
  return relu(h);
}

void ResidualBlock::set_training(bool on) {
  bn1.training = on;
  bn2.training = on;
  if (proj_bn) proj_bn->training = on;
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedVar>& params,
                            std::vector<NamedTensor>& buffers) {
  conv1.collect(prefix + ".conv1", params);
  conv2.collect(prefix + ".conv2", params);
  bn1.collect(prefix + ".bn1", params, buffers);
  bn2.collect(prefix + ".bn2", params, buffers);
  if (proj) proj->collect(prefix + ".proj", params);
  if (proj_bn) proj_bn->collect(prefix + ".proj_bn", params, buffers);
}

Var global_avg_pool(const Var& x) {
  if (x.val().rank() != 4) throw InvalidInputError("global_avg_pool expects [N,C,H,W]");
  const std::int64_t n = x.val().dim(0), c = x.val().dim(1);
  const std::int64_t hw = x.val().dim(2) * x.val().dim(3);
  Var flat = reshape(x, Shape{n * c, hw});
  return muls(reshape(sum_rows(flat), Shape{n, c}), 1.0 / static_cast<double>(hw));
}

// ---- losses ----

Var cross_entropy_per_sample(const Var& logits, const std::vector<std::int64_t>& labels) {
  const Tensor& z = logits.val();
  if (z.rank() != 2) throw InvalidInputError("cross_entropy: logits must be [N,n]");
  const std::int64_t n = z.dim(0), m = z.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw InvalidInputError("cross_entropy: label count mismatch");
  }
  // Row maxima enter as constants; the max-shifted expression still has the
  // exact softmax gradient.
  Tensor row_max(Shape{n});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = z.data() + i * m;
    row_max[i] = *std::max_element(p, p + m);
  }
  Var shifted = sub(logits, expand_cols(Var::constant(row_max), m));
  Var lse = add(vlog(sum_rows(vexp(shifted))), Var::constant(row_max));  // [N]
  Var picked = take_per_row(logits, labels);
  return sub(lse, picked);
}

Var cross_entropy_sum(const Var& logits, const std::vector<std::int64_t>& labels) {
  return sum_all(cross_entropy_per_sample(logits, labels));
}

Var cross_entropy_mean(const Var& logits, const std::vector<std::int64_t>& labels) {
  const double n = static_cast<double>(logits.val().dim(0));
  return muls(cross_entropy_sum(logits, labels), 1.0 / n);
}

// ---- optimizers ----

AdamFamily::AdamFamily(std::vector<Var> params, double lr, bool infinity_norm,
                       double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      infinity_norm_(infinity_norm) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void AdamFamily::step(const std::vector<Var>& grads) {
  if (grads.size() != params_.size()) {
    throw InvalidInputError("optimizer step: gradient count mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].val_mut();
    const Tensor& g = grads[i].val();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      if (infinity_norm_) {
        v[j] = std::max(beta2_ * v[j], std::abs(g[j]));
        p[j] -= lr_ / bc1 * m[j] / (v[j] + eps_);
      } else {
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }
}

}  // namespace paca::nn
