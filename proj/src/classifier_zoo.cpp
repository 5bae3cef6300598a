// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/classifier_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paca/checkpoint.hpp"
#include "paca/error.hpp"
#include "paca/rng.hpp"

namespace paca::zoo {

std::string arch_name(ClassifierArch a) {
  return a == ClassifierArch::small_conv ? "small_conv" : "resnet_small";
}

ClassifierArch arch_from_name(const std::string& name) {
  if (name == "small_conv") return ClassifierArch::small_conv;
  if (name == "resnet_small") return ClassifierArch::resnet_small;
  throw ConfigError("unknown classifier arch: " + name);
}

void ClassifierSpec::validate() const {
  if (num_classes < 2) throw InvalidInputError("classifier: num_classes must be >= 2");
  if (channels.size() != 3) {
    throw InvalidInputError("classifier: expected exactly 3 channel widths");
  }
  if (in_channels < 1 || image_size < 8) {
    throw InvalidInputError("classifier: bad input geometry");
  }
}

ClassifierModel::ClassifierModel(const ClassifierSpec& spec, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(derive_seed(seed, "classifier-init"));
  const auto& ch = spec_.channels;
  stem_ = nn::Conv2d(spec_.in_channels, ch[0], 3, 1, rng);
  stem_bn_ = nn::BatchNorm2d(ch[0], 0.05);
  if (spec_.arch == ClassifierArch::resnet_small) {
    blocks_.emplace_back(ch[0], ch[0], 1, true, 0.05, rng);
    blocks_.emplace_back(ch[0], ch[1], 2, true, 0.05, rng);
    blocks_.emplace_back(ch[1], ch[2], 2, true, 0.05, rng);
  } else {
    convs_.emplace_back(ch[0], ch[1], 3, 2, rng);
    convs_.emplace_back(ch[1], ch[2], 3, 2, rng);
    bns_.emplace_back(ch[1], 0.05);
    bns_.emplace_back(ch[2], 0.05);
  }
  fc_ = nn::Linear(ch[2], spec_.num_classes, rng, /*with_bias=*/true);
}

Var ClassifierModel::forward(const Var& x) {
  Var h = relu(stem_bn_.forward(stem_.forward(x)));
  if (spec_.arch == ClassifierArch::resnet_small) {
    for (auto& b : blocks_) h = b.forward(h);
  } else {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = relu(bns_[i].forward(convs_[i].forward(h)));
    }
  }
  return fc_.forward(nn::global_avg_pool(h));
}

void ClassifierModel::set_training(bool on) {
  training_ = on;
  stem_bn_.training = on;
  for (auto& b : blocks_) b.set_training(on);
  for (auto& bn : bns_) bn.training = on;
}

std::vector<nn::NamedVar> ClassifierModel::named_params() {
  std::vector<nn::NamedVar> params;
  std::vector<nn::NamedTensor> buffers;
  stem_.collect("stem", params);
  stem_bn_.collect("stem_bn", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("block" + std::to_string(i), params, buffers);
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect("conv" + std::to_string(i), params);
    bns_[i].collect("bn" + std::to_string(i), params, buffers);
  }
  fc_.collect("fc", params);
  return params;
}

std::vector<nn::NamedTensor> ClassifierModel::named_buffers() {
  std::vector<nn::NamedVar> params;
  std::vector<nn::NamedTensor> buffers;
  stem_bn_.collect("stem_bn", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("block" + std::to_string(i), params, buffers);
  }
  for (std::size_t i = 0; i < bns_.size(); ++i) {
    bns_[i].collect("bn" + std::to_string(i), params, buffers);
  }
  // drop the param entries collected alongside
  return buffers;
}

namespace {

std::map<std::string, Tensor> snapshot_tensors(ClassifierModel& m) {
  std::map<std::string, Tensor> out;
  for (auto& p : m.named_params()) out.emplace(p.name, p.var.val());
  for (auto& b : m.named_buffers()) out.emplace(b.name, *b.tensor);
  return out;
}

}  // namespace

ClassifierHandle handle_from_model(std::shared_ptr<ClassifierModel> model) {
  model->set_training(false);
  const std::string checksum = ckpt::weights_checksum(snapshot_tensors(*model));
  const std::int64_t n = model->spec().num_classes;
  return ClassifierHandle(
      [model](const Var& x) { return model->forward(x); }, n, checksum);
}

ClassifierTrainResult train_classifier(const ClassifierSpec& spec,
                                       const core::ImageBatch& train,
                                       const core::ImageBatch& test,
                                       const ClassifierTrainOptions& opts) {
  train.validate(spec.num_classes);
  test.validate(spec.num_classes);

  auto model = std::make_shared<ClassifierModel>(spec, opts.seed);
  model->set_training(true);

  std::vector<Var> params;
  for (auto& p : model->named_params()) params.push_back(p.var);
  nn::Adam optim(params, opts.lr);

  std::mt19937_64 shuffle_rng(derive_seed(opts.seed, "classifier-shuffle"));
  const std::int64_t n = train.count();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  ClassifierTrainResult result;
  for (std::int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::int64_t steps = 0;
    for (std::int64_t off = 0; off + opts.batch_size <= n; off += opts.batch_size) {
      std::vector<std::int64_t> idx(order.begin() + off,
                                    order.begin() + off + opts.batch_size);
      Tensor xb = gather_samples(train.pixels, idx);
      std::vector<std::int64_t> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        yb[i] = train.labels[static_cast<std::size_t>(idx[i])];
      }
      Var loss = nn::cross_entropy_mean(model->forward(Var::constant(xb)), yb);
      if (!std::isfinite(loss.val()[0])) {
        throw NumericError("classifier training diverged at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(steps));
      }
      optim.step(grad(loss, params));
      epoch_loss += loss.val()[0];
      ++steps;
    }
    result.epoch_losses.push_back(steps ? epoch_loss / static_cast<double>(steps) : 0.0);
  }

  model->set_training(false);
  result.model = model;
  result.handle = handle_from_model(model);
  result.test_accuracy = classifier_accuracy(result.handle, test);
  return result;
}

double classifier_accuracy(const ClassifierHandle& handle,
                           const core::ImageBatch& data, std::int64_t batch_size) {
  const std::int64_t n = data.count();
  std::int64_t correct = 0;
  for (std::int64_t off = 0; off < n; off += batch_size) {
    const std::int64_t take = std::min(batch_size, n - off);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
    std::iota(idx.begin(), idx.end(), off);
    auto pred = handle.predict(gather_samples(data.pixels, idx));
    for (std::int64_t i = 0; i < take; ++i) {
      if (pred[static_cast<std::size_t>(i)] ==
          data.labels[static_cast<std::size_t>(off + i)]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void save_classifier(std::shared_ptr<ClassifierModel> model,
                     const std::filesystem::path& dir) {
  ckpt::Checkpoint ckpt;
  const auto& spec = model->spec();
  ckpt.meta["kind"] = "classifier";
  ckpt.meta["arch"] = arch_name(spec.arch);
  ckpt.meta["num_classes"] = spec.num_classes;
  ckpt.meta["in_channels"] = spec.in_channels;
  ckpt.meta["image_size"] = spec.image_size;
  ckpt.meta["channels"] = spec.channels;
  ckpt.tensors = snapshot_tensors(*model);
  ckpt::save(dir, ckpt);
}

std::pair<ClassifierHandle, std::shared_ptr<ClassifierModel>> load_classifier(
    const ClassifierSpec& spec) {
  if (spec.checkpoint.empty()) {
    throw MissingPrerequisiteError("classifier spec has no checkpoint path");
  }
  ckpt::Checkpoint ckpt = ckpt::load(spec.checkpoint);
  if (ckpt.meta.value("kind", "") != "classifier") {
    throw LoadError("not a classifier checkpoint: " + spec.checkpoint);
  }
  ClassifierSpec stored = spec;
  stored.arch = arch_from_name(ckpt.meta["arch"].get<std::string>());
  stored.num_classes = ckpt.meta["num_classes"].get<std::int64_t>();
  stored.in_channels = ckpt.meta["in_channels"].get<std::int64_t>();
  stored.image_size = ckpt.meta["image_size"].get<std::int64_t>();
  stored.channels = ckpt.meta["channels"].get<std::vector<std::int64_t>>();
  if (stored.arch != spec.arch || stored.num_classes != spec.num_classes ||
      stored.in_channels != spec.in_channels || stored.channels != spec.channels) {
    throw LoadError("checkpoint does not match classifier spec: " + spec.checkpoint);
  }

  auto model = std::make_shared<ClassifierModel>(stored, /*seed=*/0);
  for (auto& p : model->named_params()) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw LoadError("missing tensor " + p.name);
    if (it->second.shape() != p.var.shape()) {
      throw LoadError("shape mismatch for " + p.name);
    }
    p.var.val_mut() = it->second;
  }
  for (auto& b : model->named_buffers()) {
    auto it = ckpt.tensors.find(b.name);
    if (it == ckpt.tensors.end()) throw LoadError("missing buffer " + b.name);
    *b.tensor = it->second;
  }
  model->set_training(false);
  return {handle_from_model(model), model};
}

}  // namespace paca::zoo
