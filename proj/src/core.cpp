// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paca/error.hpp"

namespace paca::core {

void ImageBatch::validate(std::int64_t num_classes) const {
  if (pixels.rank() != 4) {
    throw InvalidInputError("ImageBatch: pixels must be [N,C,H,W], got " +
                            shape_str(pixels.shape()));
  }
  const std::int64_t n = pixels.dim(0);
  if (n < 1) throw InvalidInputError("ImageBatch: N must be >= 1");
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw InvalidInputError("ImageBatch: label count mismatch");
  }
  for (std::int64_t i = 0; i < pixels.size(); ++i) {
    const double v = pixels[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidInputError("ImageBatch: pixel value " + std::to_string(v) +
                              " outside [0,1]");
    }
  }
  for (auto l : labels) {
    if (l < 0 || (num_classes >= 0 && l >= num_classes)) {
      throw InvalidInputError("ImageBatch: label out of range");
    }
  }
}

void LogitVector::validate() const {
  if (z.size() < 2) throw InvalidInputError("LogitVector: need at least 2 classes");
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInputError("LogitVector: non-finite logit");
  }
}

OneHotTarget OneHotTarget::from_logits(std::span<const double> z) {
  if (z.empty()) throw InvalidInputError("OneHotTarget: empty logits");
  OneHotTarget t;
  t.index = argmax_vec(z.data(), static_cast<std::int64_t>(z.size()));
  t.t.assign(z.size(), 0.0);
  t.t[static_cast<std::size_t>(t.index)] = 1.0;
  return t;
}

double confidence_loss(std::span<const double> z) {
  const std::int64_t n = static_cast<std::int64_t>(z.size());
  if (n < 2) throw InvalidInputError("confidence_loss: need at least 2 classes");
  double m = z[0];
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(z[static_cast<std::size_t>(i)])) {
      throw InvalidInputError("confidence_loss: non-finite logit");
    }
    m = std::max(m, z[static_cast<std::size_t>(i)]);
  }
  // -log softmax(z)_argmax = log(sum_j exp(z_j - max)); the argmax term
  // contributes exp(0).
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += std::exp(z[static_cast<std::size_t>(i)] - m);
  return std::max(std::log(s), 0.0);
}

double confidence_loss(const LogitVector& z) {
  z.validate();
  return confidence_loss(std::span<const double>(z.z));
}

double rank1_advantage(std::span<const double> z) {
  const std::int64_t n = static_cast<std::int64_t>(z.size());
  if (n < 2) throw InvalidInputError("rank1_advantage: need at least 2 classes");
  double top1 = -std::numeric_limits<double>::infinity();
  double top2 = top1;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = z[static_cast<std::size_t>(i)];
    if (v > top1) {
      top2 = top1;
      top1 = v;
    } else if (v > top2) {
      top2 = v;
    }
  }
  return top1 - top2;
}

double rank1_advantage(const LogitVector& z) {
  z.validate();
  return rank1_advantage(std::span<const double>(z.z));
}

Norms perturbation_norms(const Tensor& clean, const Tensor& adv) {
  if (!clean.same_shape(adv)) {
    throw InvalidInputError("perturbation_norms: shape mismatch " +
                            shape_str(clean.shape()) + " vs " + shape_str(adv.shape()));
  }
  Norms out;
  double sq = 0.0;
  for (std::int64_t i = 0; i < clean.size(); ++i) {
    const double d = adv[i] - clean[i];
    out.l1 += std::abs(d);
    sq += d * d;
    out.linf = std::max(out.linf, std::abs(d));
  }
  out.l2 = std::sqrt(sq);
  return out;
}

void validate_record(const Tensor& clean, const AdversarialRecord& rec) {
  if (rec.success && rec.adv_label == rec.orig_label) {
    throw InvalidInputError("AdversarialRecord: success with unchanged label");
  }
  for (std::int64_t i = 0; i < rec.adversarial.size(); ++i) {
    const double v = rec.adversarial[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidInputError("AdversarialRecord: pixel outside [0,1]");
    }
  }
  Norms n = perturbation_norms(clean, rec.adversarial);
  if (std::abs(n.l1 - rec.dist_l1) > 1e-6 || std::abs(n.l2 - rec.dist_l2) > 1e-6 ||
      std::abs(n.linf - rec.dist_linf) > 1e-6) {
    throw InvalidInputError("AdversarialRecord: stored distances disagree with tensors");
  }
}

}  // namespace paca::core
