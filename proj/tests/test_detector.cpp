// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "paca/detector.hpp"
#include "paca/error.hpp"
#include "paca/rng.hpp"

using namespace paca;
using namespace paca::detector;

namespace {

SubnetworkConfig tiny_cfg() {
  SubnetworkConfig cfg;
  cfg.stem_channels = 4;
  cfg.block_channels = {4, 8};
  return cfg;
}

Tensor rand_t(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return rand_uniform(std::move(s), rng, lo, hi);
}

}  // namespace

TEST_CASE("subnetwork maps [N,3,32,32] to [N,2]") {
  SubnetworkConfig cfg;  // spec defaults: stem 32, blocks (32,64,128,256)
  Subnetwork net(cfg, 1);
  net.set_training(false);
  NoGradGuard ng;
  Var out = net.forward(Var::constant(rand_t({2, 3, 32, 32}, 2)));
  CHECK(out.shape() == Shape{2, 2});
}

TEST_CASE("ablation contract: no shortcuts means zero add junctions") {
  SubnetworkConfig cfg = tiny_cfg();
  cfg.use_shortcuts = false;
  Subnetwork net(cfg, 1);
  auto census = net.census();
  CHECK(census.add_junctions == 0);
  CHECK(census.front_avg_pool_ops == 0);

  SubnetworkConfig with = tiny_cfg();
  Subnetwork net2(with, 1);
  CHECK(net2.census().add_junctions == 2);
  CHECK(net2.census().front_avg_pool_ops == 0);
  CHECK(net2.census().strided_convs >= 1);
}

TEST_CASE("final FC parameter count: GAP C*2 vs GCP C(C+1)/2*2") {
  SubnetworkConfig cfg = tiny_cfg();  // last channels = 8
  cfg.pooling = Pooling::GAP;
  Subnetwork gap_net(cfg, 1);
  CHECK(gap_net.census().fc_params == 8 * 2);

  cfg.pooling = Pooling::GCP;
  Subnetwork gcp_net(cfg, 1);
  CHECK(gcp_net.census().fc_params == 8 * 9 / 2 * 2);  // C(C+1)/2 * 2 = 72
  CHECK(gcp_output_dim(8) == 36);
}

TEST_CASE("gcp_pool: constant feature maps pool to zero") {
  Tensor f(Shape{2, 3, 4, 4});
  for (std::int64_t i = 0; i < 2 * 3; ++i) {
    for (std::int64_t k = 0; k < 16; ++k) f[i * 16 + k] = 0.7 * (i + 1);
  }
  NoGradGuard ng;
  Var out = gcp_pool(Var::constant(f));
  CHECK(out.shape() == Shape{2, 6});
  for (std::int64_t i = 0; i < out.val().size(); ++i) {
    CHECK(out.val()[i] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("gcp_pool: C=1 output equals sqrt of the spatial sample variance") {
  std::mt19937_64 rng(5);
  Tensor f = randn({1, 1, 3, 3}, rng);
  // direct variance computation (1/(HW-1) convention)
  double mean = 0.0;
  for (int i = 0; i < 9; ++i) mean += f[i];
  mean /= 9.0;
  double var = 0.0;
  for (int i = 0; i < 9; ++i) var += (f[i] - mean) * (f[i] - mean);
  var /= 8.0;

  NoGradGuard ng;
  Var out = gcp_pool(Var::constant(f));
  CHECK(out.val().size() == 1);
  CHECK(out.val()[0] == doctest::Approx(std::sqrt(var)).epsilon(1e-6));
}

TEST_CASE("gcp_pool is invariant to spatial permutation") {
  Tensor f = rand_t({1, 4, 2, 3}, 7, -1.0, 1.0);
  // permute the 6 spatial positions identically across channels
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Tensor g(f.shape());
  for (int c = 0; c < 4; ++c) {
    for (int p = 0; p < 6; ++p) g[c * 6 + perm[p]] = f[c * 6 + p];
  }
  NoGradGuard ng;
  Tensor a = gcp_pool(Var::constant(f)).val();
  Tensor b = gcp_pool(Var::constant(g)).val();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("gcp_pool reconstruction is symmetric positive semi-definite") {
  Tensor f = rand_t({3, 6, 4, 4}, 11, -1.0, 1.0);
  NoGradGuard ng;
  Tensor packed = gcp_pool(Var::constant(f)).val();
  const int c = 6;
  for (int s = 0; s < 3; ++s) {
    Eigen::MatrixXd m(c, c);
    int k = 0;
    for (int r = 0; r < c; ++r) {
      for (int cc = r; cc < c; ++cc) {
        m(r, cc) = packed[s * packed.dim(1) + k];
        m(cc, r) = m(r, cc);
        ++k;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-6);
  }
}

TEST_CASE("gcp_pool rejects single spatial position") {
  CHECK_THROWS_AS(gcp_pool(Var::constant(Tensor(Shape{1, 2, 1, 1}, 0.5))),
                  InvalidInputError);
}

TEST_CASE("gcp_pool differentiates") {
  Tensor f = rand_t({2, 3, 3, 3}, 13, -1.0, 1.0);
  Var x(f, true);
  Var out = gcp_pool(x, 5, true);
  Var loss = sum_all(mul(out, out));
  Tensor g = grad(loss, {x})[0].val();
  // finite difference on a few probe entries
  auto eval = [&](const Tensor& t) {
    NoGradGuard ng;
    Var o = gcp_pool(Var::constant(t), 5, true);
    return sum(mul(o, o).val());
  };
  const double h = 1e-6;
  for (std::int64_t j : {0L, 17L, 40L}) {
    Tensor p = f, m = f;
    p[j] += h;
    m[j] -= h;
    const double fd = (eval(p) - eval(m)) / (2.0 * h);
    CHECK(g[j] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("fuse_scores examples") {
  auto s = fuse_scores({1.0, 2.0}, {3.0, -1.0});
  CHECK(s.z_fused[0] == 4.0);
  CHECK(s.z_fused[1] == 1.0);
  CHECK(s.decision() == 0);  // clean

  auto tie = fuse_scores({0.0, 0.0}, {0.0, 0.0});
  CHECK(tie.z_fused[0] == 0.0);
  CHECK(tie.decision() == 0);  // ties resolve to clean

  auto ab = fuse_scores({1.5, -0.5}, {0.25, 2.0});
  auto ba = fuse_scores({0.25, 2.0}, {1.5, -0.5});
  CHECK(ab.z_fused[0] == ba.z_fused[0]);
  CHECK(ab.z_fused[1] == ba.z_fused[1]);

  CHECK_THROWS_AS(fuse_scores({std::nan(""), 0.0}, {0.0, 0.0}), NumericError);
}

TEST_CASE("Eq-3 exactness on a real two-stream detector") {
  TwoStreamDetector det(Variant::full, tiny_cfg(), 3);
  det.set_training(false);
  Tensor images = rand_t({3, 3, 16, 16}, 17);
  Tensor grads = rand_t({3, 3, 16, 16}, 19);
  auto scores = det.score(images, grads);
  REQUIRE(scores.size() == 3);
  for (auto& s : scores) {
    for (int k = 0; k < 2; ++k) {
      CHECK(s.z_fused[k] == s.z_image[k] + s.z_gradient[k]);  // exact
    }
  }
}

TEST_CASE("detect: batch contract and stream ablation independence") {
  TwoStreamDetector image_only(Variant::image_only, tiny_cfg(), 5);
  image_only.set_training(false);
  Tensor images = rand_t({5, 3, 16, 16}, 23);
  Tensor grads1 = rand_t({5, 3, 16, 16}, 29);
  Tensor grads2 = rand_t({5, 3, 16, 16}, 31);

  auto r1 = detect(image_only, images, grads1);
  auto r2 = detect(image_only, images, grads2);
  REQUIRE(r1.decisions.size() == 5);
  CHECK(r1.decisions == r2.decisions);  // gradients cannot matter
  for (std::size_t i = 0; i < r1.scores.size(); ++i) {
    CHECK(r1.scores[i].z_gradient[0] == 0.0);
    CHECK(r1.scores[i].z_fused[0] == r1.scores[i].z_image[0]);
  }
}

TEST_CASE("composed streams equal the monolithic fused pass") {
  TwoStreamDetector det(Variant::full, tiny_cfg(), 7);
  det.set_training(false);
  Tensor images = rand_t({4, 3, 16, 16}, 37);
  Tensor grads = rand_t({4, 3, 16, 16}, 41);

  auto scores = det.score(images, grads);
  NoGradGuard ng;
  Tensor zi = det.image_stream()->forward(Var::constant(images)).val();
  Tensor zg = det.gradient_stream()->forward(Var::constant(grads)).val();
  for (std::int64_t i = 0; i < 4; ++i) {
    const double fused0 = zi[i * 2] + zg[i * 2];
    const double fused1 = zi[i * 2 + 1] + zg[i * 2 + 1];
    CHECK(scores[static_cast<std::size_t>(i)].z_fused[0] == fused0);
    CHECK(scores[static_cast<std::size_t>(i)].z_fused[1] == fused1);
    const int expect = fused1 > fused0 ? 1 : 0;
    CHECK(scores[static_cast<std::size_t>(i)].decision() == expect);
  }
}

TEST_CASE("shortcut signal preservation with zeroed residual branches") {
  SubnetworkConfig cfg = tiny_cfg();
  Subnetwork net(cfg, 9);
  net.set_training(false);
  // zero the residual branch: convolutions and batch-norm affine params
  for (auto& b : net.blocks) {
    auto zero = [](Var& v) {
      if (v.defined()) std::fill(v.val_mut().data(), v.val_mut().data() + v.val_mut().size(), 0.0);
    };
    zero(b.conv1.weight);
    zero(b.conv2.weight);
    zero(b.bn1.gamma);
    zero(b.bn1.beta);
    zero(b.bn2.gamma);
    zero(b.bn2.beta);
  }
  Tensor x = rand_t({2, 3, 16, 16}, 43);
  NoGradGuard ng;
  Var stem_out = relu(net.stem_bn.forward(net.stem.forward(Var::constant(x))));
  // propagate the stem output through the shortcut paths only
  Var expect = stem_out;
  for (auto& b : net.blocks) {
    if (b.proj) {
      expect = b.proj_bn->forward(b.proj->forward(expect));
    }
    expect = relu(expect);
  }
  Var got = net.features(Var::constant(x));
  REQUIRE(got.shape() == expect.shape());
  for (std::int64_t i = 0; i < got.val().size(); ++i) {
    CHECK(got.val()[i] == doctest::Approx(expect.val()[i]).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end differentiability of the full detector loss") {
  SubnetworkConfig cfg;
  cfg.stem_channels = 3;
  cfg.block_channels = {4};
  TwoStreamDetector det(Variant::full, cfg, 11);
  det.set_training(false);
  Tensor images = rand_t({1, 3, 8, 8}, 47, 0.2, 0.8);
  Tensor grads = rand_t({1, 3, 8, 8}, 53, 0.0, 0.2);

  Var x(images, true);
  Var fused = det.fused_logits(x, Var::constant(grads), Var());
  Var loss = nn::cross_entropy_sum(fused, {1});
  Tensor g = grad(loss, {x})[0].val();

  auto eval = [&](const Tensor& t) {
    NoGradGuard ng;
    Var f = det.fused_logits(Var::constant(t), Var::constant(grads), Var());
    return nn::cross_entropy_sum(f, {1}).val()[0];
  };
  const double h = 1e-5;
  for (std::int64_t j : {5L, 63L, 130L}) {
    Tensor p = images, m = images;
    p[j] += h;
    m[j] -= h;
    const double fd = (eval(p) - eval(m)) / (2.0 * h);
    const double rel = std::abs(g[j] - fd) / (std::abs(fd) + 1e-8);
    CAPTURE(j);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("logits+FC baseline: shape and parameter count") {
  LogitsFcBaseline head(10, 13);
  NoGradGuard ng;
  Var out = head.forward(Var::constant(rand_t({4, 10}, 59, -2.0, 2.0)));
  CHECK(out.shape() == Shape{4, 2});
  // n*512 + 512 biases + 512*32 + 32 biases + 32*2
  CHECK(head.param_count() == 10 * 512 + 512 + 512 * 32 + 32 + 32 * 2);
}

TEST_CASE("detector checkpoints round trip bit-exactly") {
  auto dir = std::filesystem::temp_directory_path() / "paca_det_ckpt";
  std::filesystem::remove_all(dir);

  TwoStreamDetector det(Variant::full, tiny_cfg(), 15);
  det.set_training(false);
  save_detector(det, dir, {{"note", "unit-test"}});
  TwoStreamDetector loaded = load_detector(dir);

  Tensor images = rand_t({2, 3, 16, 16}, 61);
  Tensor grads = rand_t({2, 3, 16, 16}, 67);
  auto a = det.score(images, grads);
  auto b = loaded.score(images, grads);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].z_fused[0] == b[i].z_fused[0]);  // bit-exact
    CHECK(a[i].z_fused[1] == b[i].z_fused[1]);
  }

  // save again and compare raw weight bytes through reload
  auto dir2 = std::filesystem::temp_directory_path() / "paca_det_ckpt2";
  std::filesystem::remove_all(dir2);
  save_detector(loaded, dir2);
  TwoStreamDetector loaded2 = load_detector(dir2);
  auto pa = loaded.named_params();
  auto pb = loaded2.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Tensor& ta = pa[i].var.val();
    const Tensor& tb = pb[i].var.val();
    REQUIRE(ta.size() == tb.size());
    for (std::int64_t j = 0; j < ta.size(); ++j) CHECK(ta[j] == tb[j]);
  }
}

TEST_CASE("invalid configs are rejected") {
  SubnetworkConfig bad = tiny_cfg();
  bad.stem_kernel = 4;
  CHECK_THROWS_AS(Subnetwork(bad, 1), InvalidInputError);
  SubnetworkConfig bad2 = tiny_cfg();
  bad2.block_channels.clear();
  CHECK_THROWS_AS(Subnetwork(bad2, 1), InvalidInputError);
  SubnetworkConfig bad3 = tiny_cfg();
  bad3.num_classes = 3;
  CHECK_THROWS_AS(Subnetwork(bad3, 1), InvalidInputError);
}
