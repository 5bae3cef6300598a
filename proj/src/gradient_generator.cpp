// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/gradient_generator.hpp"

#include <cmath>

#include "paca/error.hpp"
#include "paca/nn.hpp"

namespace paca::gradgen {

void ConfidenceGradient::validate(const Shape& image_shape) const {
  if (g_abs.shape() != image_shape) {
    throw InvalidInputError("ConfidenceGradient: shape " + shape_str(g_abs.shape()) +
                            " does not match images " + shape_str(image_shape));
  }
  for (std::int64_t i = 0; i < g_abs.size(); ++i) {
    if (!(g_abs[i] >= 0.0) || !std::isfinite(g_abs[i])) {
      throw NumericError("ConfidenceGradient: negative or non-finite entry");
    }
  }
}

Var confidence_loss_per_sample(const Var& logits) {
  if (logits.val().rank() != 2 || logits.val().dim(1) < 2) {
    throw InvalidInputError("confidence loss: logits must be [N,n] with n >= 2");
  }
  if (!logits.val().all_finite()) {
    throw InvalidInputError("confidence loss: non-finite logits");
  }
  // Predicted labels become fixed targets; differentiating through argmax is
  // undefined and deliberately avoided.
  std::vector<std::int64_t> predicted = argmax_rows(logits.val());
  return nn::cross_entropy_per_sample(logits, predicted);
}

Var confidence_loss_sum(const Var& logits) {
  return sum_all(confidence_loss_per_sample(logits));
}

ConfidenceGradient generate_gradient(const ClassifierHandle& model,
                                     const core::ImageBatch& images) {
  images.validate();
  Var x(images.pixels, /*requires_grad=*/true);
  Var logits = model.forward(x);
  Var loss = confidence_loss_sum(logits);
  Var g = grad(loss, {x})[0];

  const Tensor& gt = g.val();
  const std::int64_t n = gt.dim(0);
  const std::int64_t stride = gt.size() / n;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    if (!std::isfinite(gt[i])) {
      throw NumericError("non-finite confidence gradient at batch index " +
                         std::to_string(i / stride));
    }
  }
  ConfidenceGradient out;
  out.g_abs = Tensor(gt.shape());
  for (std::int64_t i = 0; i < gt.size(); ++i) out.g_abs[i] = std::abs(gt[i]);
  return out;
}

Tensor generate_gradient_chunked(const ClassifierHandle& model, const Tensor& pixels,
                                 std::int64_t chunk) {
  const std::int64_t n = pixels.dim(0);
  Tensor out(pixels.shape());
  const std::int64_t stride = pixels.size() / n;
  for (std::int64_t off = 0; off < n; off += chunk) {
    const std::int64_t take = std::min(chunk, n - off);
    Shape s = pixels.shape();
    s[0] = take;
    Tensor part(s);
    std::copy(pixels.data() + off * stride, pixels.data() + (off + take) * stride,
              part.data());
    core::ImageBatch batch;
    batch.pixels = std::move(part);
    batch.labels.assign(static_cast<std::size_t>(take), 0);
    ConfidenceGradient g = generate_gradient(model, batch);
    std::copy(g.g_abs.data(), g.g_abs.data() + take * stride, out.data() + off * stride);
  }
  return out;
}

Var confidence_gradient_var(const ClassifierHandle& model, const Var& x,
                            bool create_graph) {
  Var logits = model.forward(x);
  Var loss = confidence_loss_sum(logits);
  Var g = grad(loss, {x}, create_graph)[0];
  if (!create_graph) g = Var::constant(g.val());
  return vabs(g);
}

std::optional<ConfidenceGradient> GradientStream::next() {
  std::optional<core::ImageBatch> batch = source_();
  if (!batch.has_value()) return std::nullopt;
  try {
    ConfidenceGradient g = generate_gradient(model_, *batch);
    ++batch_index_;
    return g;
  } catch (const NumericError& e) {
    throw NumericError("gradient stream batch " + std::to_string(batch_index_) +
                       ": " + e.what());
  }
}

}  // namespace paca::gradgen
