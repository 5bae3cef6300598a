// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <string>

#include "paca/autodiff.hpp"

namespace paca {

// Opaque differentiable function mapping image batches [N,C,H,W] to logit
// batches [N,n], deterministic in evaluation mode. Attacks and the gradient
// generator treat it as frozen: they differentiate with respect to inputs
// only and never touch its parameters.
class ClassifierHandle {
 public:
  using ForwardFn = std::function<Var(const Var&)>;

  ClassifierHandle() = default;
  ClassifierHandle(ForwardFn forward, std::int64_t num_classes,
                   std::string checksum = "")
      : forward_(std::move(forward)), num_classes_(num_classes),
        checksum_(std::move(checksum)) {}

  bool defined() const { return static_cast<bool>(forward_); }
  std::int64_t num_classes() const { return num_classes_; }
  const std::string& checksum() const { return checksum_; }

  // Differentiable forward pass; records onto the active graph.
  Var forward(const Var& images) const { return forward_(images); }

  // Convenience: plain logits with no graph recording.
  Tensor logits(const Tensor& images) const {
    NoGradGuard ng;
    return forward_(Var::constant(images)).val();
  }

  std::vector<std::int64_t> predict(const Tensor& images) const {
    return argmax_rows(logits(images));
  }

 private:
  ForwardFn forward_;
  std::int64_t num_classes_ = 0;
  std::string checksum_;
};

}  // namespace paca
