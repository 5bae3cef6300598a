// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "paca/nn.hpp"

namespace paca::detector {

enum class Pooling { GCP, GAP };

std::string pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& name);

// One detection sub-network: 5x5 stem (BN+ReLU, no pooling), residual blocks
// downsampled only by strided convolution, a final pooling stage, and one
// bias-free FC layer to 2 logits.
struct SubnetworkConfig {
  std::int64_t in_channels = 3;
  std::int64_t stem_kernel = 5;
  std::int64_t stem_channels = 32;
  std::vector<std::int64_t> block_channels = {32, 64, 128, 256};
  bool use_shortcuts = true;
  Pooling pooling = Pooling::GCP;
  std::int64_t num_classes = 2;  // fixed
  int gcp_newton_steps = 5;
  bool gcp_sqrt_normalize = true;
  double bn_momentum = 0.05;

  void validate() const;
};

// Construction census used by the architecture-constraint checks.
struct SubnetworkCensus {
  int front_avg_pool_ops = 0;   // always zero by construction
  int add_junctions = 0;        // identity/projection shortcut joins
  int strided_convs = 0;        // downsampling operations
  std::int64_t fc_params = 0;
};

// Matrix-square-root-normalized global covariance pooling. Centers each
// sample's C x (H*W) feature matrix, forms the covariance, normalizes it by
// its trace, runs a fixed number of Newton-Schulz iterations, compensates by
// sqrt(trace) and returns the flattened upper triangle: [N, C(C+1)/2].
Var gcp_pool(const Var& features, int newton_steps = 5, bool sqrt_normalize = true);

std::int64_t gcp_output_dim(std::int64_t channels);

struct Subnetwork {
  SubnetworkConfig cfg;
  nn::Conv2d stem;
  nn::BatchNorm2d stem_bn;
  std::vector<nn::ResidualBlock> blocks;
  nn::Linear fc;  // bias-free, xavier-uniform init

  Subnetwork() = default;
  Subnetwork(const SubnetworkConfig& cfg, std::uint64_t seed);

  Var features(const Var& x);  // pre-pooling feature maps
  Var forward(const Var& x);   // [N,C,H,W] -> [N,2]
  void set_training(bool on);
  SubnetworkCensus census() const;
  void collect(const std::string& prefix, std::vector<nn::NamedVar>& params,
               std::vector<nn::NamedTensor>& buffers);
};

// 2-class scores from both streams plus their sum (the fused score).
struct DetectorScore {
  std::array<double, 2> z_image{};
  std::array<double, 2> z_gradient{};
  std::array<double, 2> z_fused{};
  // argmax with ties resolved to "clean" (index 0)
  int decision() const { return z_fused[1] > z_fused[0] ? 1 : 0; }
};

DetectorScore fuse_scores(const std::array<double, 2>& z_image,
                          const std::array<double, 2>& z_gradient);

// Logits-only baseline: classifier logits -> 512 -> 32 -> 2 with ReLU
// between layers; hidden layers carry biases, as plain MLP layers do.
struct LogitsFcBaseline {
  std::int64_t in_dim = 0;
  nn::Linear fc1, fc2, fc3;

  LogitsFcBaseline() = default;
  LogitsFcBaseline(std::int64_t in_dim, std::uint64_t seed);
  Var forward(const Var& logits) const;
  std::int64_t param_count() const;
  void collect(const std::string& prefix, std::vector<nn::NamedVar>& params);
};

enum class Variant { full, image_only, gradient_only, gap, no_shortcut, logits_fc };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// The two-stream detector and its ablation variants. Streams share the
// architecture but never the weights.
class TwoStreamDetector {
 public:
  TwoStreamDetector() = default;
  TwoStreamDetector(Variant variant, const SubnetworkConfig& cfg, std::uint64_t seed,
                    std::int64_t classifier_classes = 0);

  Variant variant() const { return variant_; }
  const SubnetworkConfig& config() const { return cfg_; }
  std::int64_t classifier_classes() const { return classifier_classes_; }

  bool uses_images() const;
  bool uses_gradients() const;
  bool uses_logits() const { return variant_ == Variant::logits_fc; }

  // Differentiable fused logits [N,2]. Pass the inputs the variant uses;
  // unused inputs may be undefined.
  Var fused_logits(const Var& images, const Var& gradients, const Var& logits);

  // Per-stream scores plus decisions, evaluation-mode convenience.
  std::vector<DetectorScore> score(const Tensor& images, const Tensor& gradients,
                                   const Tensor& logits = Tensor());

  void set_training(bool on);
  bool training() const { return training_; }

  std::vector<nn::NamedVar> named_params();
  std::vector<nn::NamedTensor> named_buffers();

  Subnetwork* image_stream() { return image_stream_ ? &*image_stream_ : nullptr; }
  Subnetwork* gradient_stream() {
    return gradient_stream_ ? &*gradient_stream_ : nullptr;
  }

 private:
  Variant variant_ = Variant::full;
  SubnetworkConfig cfg_;
  std::int64_t classifier_classes_ = 0;
  bool training_ = false;
  std::optional<Subnetwork> image_stream_;
  std::optional<Subnetwork> gradient_stream_;
  std::optional<LogitsFcBaseline> logits_head_;
};

struct DetectionBatchResult {
  std::vector<DetectorScore> scores;
  std::vector<int> decisions;  // 1 = adversarial
};

// Evaluation-mode detection of an image batch with matching gradients.
DetectionBatchResult detect(TwoStreamDetector& det, const Tensor& images,
                            const Tensor& gradients, const Tensor& logits = Tensor(),
                            std::int64_t batch_size = 128);

// ---- checkpointing ----

void save_detector(TwoStreamDetector& det, const std::filesystem::path& dir,
                   const nlohmann::json& provenance = {});
TwoStreamDetector load_detector(const std::filesystem::path& dir);

}  // namespace paca::detector
