// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "paca/tensor.hpp"

namespace paca::core {

// Batch of images, channels-first, pixel values in [0,1], with labels.
struct ImageBatch {
  Tensor pixels;                     // [N, C, H, W]
  std::vector<std::int64_t> labels;  // [N]

  std::int64_t count() const { return pixels.rank() > 0 ? pixels.dim(0) : 0; }
  void validate(std::int64_t num_classes = -1) const;
};

// Raw classifier outputs (pre-softmax) for one sample.
struct LogitVector {
  std::vector<double> z;
  void validate() const;
};

// One-hot encoding of the argmax of a logit vector.
struct OneHotTarget {
  std::vector<double> t;
  std::int64_t index = 0;
  static OneHotTarget from_logits(std::span<const double> z);
};

// Provenance record for one adversarial example.
struct AdversarialRecord {
  Tensor adversarial;  // [C, H, W]
  std::int64_t original_index = 0;
  std::string attack_name;
  std::map<std::string, double> params;
  std::int64_t orig_label = 0;     // classifier's clean prediction
  std::int64_t adv_label = 0;
  std::int64_t dataset_label = 0;  // ground-truth label of the source image
  bool success = false;
  double dist_l1 = 0.0, dist_l2 = 0.0, dist_linf = 0.0;
};

struct Norms {
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
};

// Cross-entropy between softmax(z) and the one-hot of argmax(z); equals
// -log(softmax(z)_argmax). Computed with max-subtraction, so extreme logits
// stay finite.
double confidence_loss(std::span<const double> z);
double confidence_loss(const LogitVector& z);

// Difference between the largest and second-largest logit. Ties give 0.
double rank1_advantage(std::span<const double> z);
double rank1_advantage(const LogitVector& z);

// L1/L2/Linf norms of the flattened difference adv - clean.
Norms perturbation_norms(const Tensor& clean, const Tensor& adv);

// Checks an AdversarialRecord against the clean image it derives from:
// pixel bounds, success/label consistency, recorded distances within 1e-6.
void validate_record(const Tensor& clean, const AdversarialRecord& rec);

}  // namespace paca::core
