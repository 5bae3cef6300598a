// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "paca/classifier.hpp"
#include "paca/core.hpp"
#include "paca/nn.hpp"

namespace paca::zoo {

enum class ClassifierArch { small_conv, resnet_small };

std::string arch_name(ClassifierArch a);
ClassifierArch arch_from_name(const std::string& name);

struct ClassifierSpec {
  ClassifierArch arch = ClassifierArch::resnet_small;
  std::int64_t num_classes = 10;
  std::int64_t in_channels = 3;
  std::int64_t image_size = 32;
  std::vector<std::int64_t> channels = {16, 32, 64};
  std::string checkpoint;  // optional path for load_classifier

  void validate() const;
};

// Desk-scale target classifiers: a plain strided conv stack and a small
// residual network, both ending in global average pooling and one FC layer.
class ClassifierModel {
 public:
  ClassifierModel(const ClassifierSpec& spec, std::uint64_t seed);

  Var forward(const Var& x);
  void set_training(bool on);
  bool training() const { return training_; }
  const ClassifierSpec& spec() const { return spec_; }

  std::vector<nn::NamedVar> named_params();
  std::vector<nn::NamedTensor> named_buffers();

 private:
  ClassifierSpec spec_;
  bool training_ = false;
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  std::vector<nn::ResidualBlock> blocks_;  // resnet_small
  std::vector<nn::Conv2d> convs_;          // small_conv tail
  std::vector<nn::BatchNorm2d> bns_;
  nn::Linear fc_;
};

struct ClassifierTrainOptions {
  std::int64_t epochs = 15;
  std::int64_t batch_size = 64;
  double lr = 0.001;  // Adam
  std::uint64_t seed = 0;
};

struct ClassifierTrainResult {
  ClassifierHandle handle;
  std::shared_ptr<ClassifierModel> model;
  double test_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

// Trains with Adam on cross-entropy and reports exact-match accuracy on the
// test split. Non-finite loss aborts with epoch/step provenance.
ClassifierTrainResult train_classifier(const ClassifierSpec& spec,
                                       const core::ImageBatch& train,
                                       const core::ImageBatch& test,
                                       const ClassifierTrainOptions& opts);

double classifier_accuracy(const ClassifierHandle& handle,
                           const core::ImageBatch& data,
                           std::int64_t batch_size = 256);

ClassifierHandle handle_from_model(std::shared_ptr<ClassifierModel> model);

void save_classifier(std::shared_ptr<ClassifierModel> model,
                     const std::filesystem::path& dir);
// Loads spec.checkpoint, validating it against the spec. The returned
// handle is in evaluation mode with frozen weights.
std::pair<ClassifierHandle, std::shared_ptr<ClassifierModel>> load_classifier(
    const ClassifierSpec& spec);

}  // namespace paca::zoo
