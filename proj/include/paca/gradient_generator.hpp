// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>

#include "paca/classifier.hpp"
#include "paca/core.hpp"

namespace paca::gradgen {

// Per-pixel absolute gradient of the confidence loss w.r.t. the input image.
struct ConfidenceGradient {
  Tensor g_abs;  // [N,C,H,W], entries >= 0 and finite
  void validate(const Shape& image_shape) const;
};

// Confidence loss (cross-entropy of softmax(z) against the one-hot of the
// *predicted* label) summed over the batch. The one-hot target is fixed by
// the forward pass: no gradient flows through the argmax.
Var confidence_loss_sum(const Var& logits);
Var confidence_loss_per_sample(const Var& logits);

// |dL/dx| for a frozen classifier in evaluation mode. Classifier parameters
// are left untouched.
ConfidenceGradient generate_gradient(const ClassifierHandle& model,
                                     const core::ImageBatch& images);

// Same computation, chunked so memory stays bounded by one chunk.
Tensor generate_gradient_chunked(const ClassifierHandle& model, const Tensor& pixels,
                                 std::int64_t chunk = 128);

// Differentiable confidence gradient for the adaptive attack. With
// `create_graph` the result stays connected to `x` through the backward
// graph (enabling gradient-of-gradient); without it |g| enters downstream
// graphs as a constant that callers refresh between optimizer steps.
Var confidence_gradient_var(const ClassifierHandle& model, const Var& x,
                            bool create_graph);

// Streaming variant over an iterator of batches; yields gradients in input
// order with memory bounded by one batch.
class GradientStream {
 public:
  using BatchSource = std::function<std::optional<core::ImageBatch>()>;
  GradientStream(ClassifierHandle model, BatchSource source)
      : model_(std::move(model)), source_(std::move(source)) {}

  std::optional<ConfidenceGradient> next();

 private:
  ClassifierHandle model_;
  BatchSource source_;
  std::int64_t batch_index_ = 0;
};

}  // namespace paca::gradgen
