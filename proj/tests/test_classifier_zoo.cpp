// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "paca/classifier_zoo.hpp"
#include "paca/checkpoint.hpp"
#include "paca/dataset.hpp"
#include "paca/error.hpp"
#include "paca/gradient_generator.hpp"

using namespace paca;
using namespace paca::zoo;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("paca_zoo_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

ClassifierSpec tiny_spec() {
  ClassifierSpec spec;
  spec.arch = ClassifierArch::resnet_small;
  spec.num_classes = 10;
  spec.image_size = 16;
  spec.channels = {4, 8, 8};
  return spec;
}

}  // namespace

TEST_CASE("tiny classifier trains above chance and is deterministic in eval mode") {
  data::ShapesConfig dc;
  dc.count = 300;
  dc.image_size = 16;
  dc.noise = 0.06;
  dc.seed = 101;
  auto train = data::make_shapes(dc);
  dc.count = 100;
  dc.seed = 202;
  auto test = data::make_shapes(dc);

  ClassifierTrainOptions opts;
  opts.epochs = 6;
  opts.batch_size = 30;
  opts.seed = 7;
  auto result = train_classifier(tiny_spec(), train, test, opts);
  CHECK(result.test_accuracy > 0.4);  // far above 10% chance for a smoke run
  CHECK(result.epoch_losses.size() == 6);
  CHECK(result.epoch_losses.front() > result.epoch_losses.back());

  // evaluation-mode determinism: bit-identical logits
  Tensor probe = gather_samples(test.pixels, {0, 1, 2, 3});
  Tensor a = result.handle.logits(probe);
  Tensor b = result.handle.logits(probe);
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  SUBCASE("save/load round trip reproduces logits exactly") {
    auto dir = temp_dir("roundtrip");
    save_classifier(result.model, dir / "clf");
    ClassifierSpec spec = tiny_spec();
    spec.checkpoint = (dir / "clf").string();
    auto [loaded, model2] = load_classifier(spec);
    Tensor c = loaded.logits(probe);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == c[i]);

    // loading twice gives identical outputs
    auto [loaded2, model3] = load_classifier(spec);
    Tensor d = loaded2.logits(probe);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(c[i] == d[i]);
  }

  SUBCASE("truncated checkpoint file fails to load") {
    auto dir = temp_dir("tamper");
    save_classifier(result.model, dir / "clf");
    // truncate one weight file
    auto weights = dir / "clf" / "weights";
    std::filesystem::path victim;
    for (auto& e : std::filesystem::directory_iterator(weights)) {
      victim = e.path();
      break;
    }
    std::filesystem::resize_file(victim, std::filesystem::file_size(victim) / 2);
    ClassifierSpec spec = tiny_spec();
    spec.checkpoint = (dir / "clf").string();
    CHECK_THROWS_AS(load_classifier(spec), LoadError);
  }

  SUBCASE("frozen weights: gradient generation does not modify the classifier") {
    auto params_before = ckpt::weights_checksum([&] {
      std::map<std::string, Tensor> t;
      for (auto& p : result.model->named_params()) t.emplace(p.name, p.var.val());
      return t;
    }());
    core::ImageBatch images;
    images.pixels = gather_samples(test.pixels, {0, 1, 2});
    images.labels = {0, 0, 0};
    (void)gradgen::generate_gradient(result.handle, images);
    auto params_after = ckpt::weights_checksum([&] {
      std::map<std::string, Tensor> t;
      for (auto& p : result.model->named_params()) t.emplace(p.name, p.var.val());
      return t;
    }());
    CHECK(params_before == params_after);
  }
}

TEST_CASE("accuracy is the exact match fraction") {
  // classifier that always predicts class 0
  ClassifierHandle constant0(
      [](const Var& x) {
        const std::int64_t n = x.val().dim(0);
        Tensor z(Shape{n, 3});
        for (std::int64_t i = 0; i < n; ++i) z[i * 3] = 1.0;
        return Var::constant(z);
      },
      3);
  core::ImageBatch data;
  data.pixels = Tensor(Shape{4, 1, 2, 2}, 0.5);
  data.labels = {0, 1, 0, 2};
  CHECK(classifier_accuracy(constant0, data) == doctest::Approx(0.5));
}

TEST_CASE("missing checkpoint raises a load error") {
  ClassifierSpec spec = tiny_spec();
  spec.checkpoint = "/nonexistent/path/clf";
  CHECK_THROWS_AS(load_classifier(spec), LoadError);
  ClassifierSpec none = tiny_spec();
  CHECK_THROWS_AS(load_classifier(none), MissingPrerequisiteError);
}

TEST_CASE("small_conv variant constructs and runs") {
  ClassifierSpec spec = tiny_spec();
  spec.arch = ClassifierArch::small_conv;
  ClassifierModel model(spec, 3);
  model.set_training(false);
  NoGradGuard ng;
  Var out = model.forward(Var::constant(Tensor(Shape{2, 3, 16, 16}, 0.5)));
  CHECK(out.shape() == Shape{2, 10});
}
