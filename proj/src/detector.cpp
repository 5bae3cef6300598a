// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/detector.hpp"

#include <cmath>
#include <numeric>

#include "paca/checkpoint.hpp"
#include "paca/error.hpp"
#include "paca/rng.hpp"

namespace paca::detector {

std::string pooling_name(Pooling p) { return p == Pooling::GCP ? "gcp" : "gap"; }

Pooling pooling_from_name(const std::string& name) {
  if (name == "gcp") return Pooling::GCP;
  if (name == "gap") return Pooling::GAP;
  throw ConfigError("unknown pooling: " + name);
}

void SubnetworkConfig::validate() const {
  if (stem_kernel % 2 != 1 || stem_kernel < 1) {
    throw InvalidInputError("subnetwork: stem kernel must be odd");
  }
  if (block_channels.empty()) {
    throw InvalidInputError("subnetwork: block_channels must be non-empty");
  }
  if (num_classes != 2) {
    throw InvalidInputError("subnetwork: detector has exactly 2 classes");
  }
  if (gcp_newton_steps < 0) {
    throw InvalidInputError("subnetwork: negative Newton-Schulz step count");
  }
}

std::int64_t gcp_output_dim(std::int64_t channels) {
  return channels * (channels + 1) / 2;
}

Var gcp_pool(const Var& features, int newton_steps, bool sqrt_normalize) {
  const Tensor& f = features.val();
  if (f.rank() != 4) throw InvalidInputError("gcp_pool expects [N,C,H,W]");
  const std::int64_t n = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  if (hw < 2) throw InvalidInputError("gcp_pool: needs at least 2 spatial positions");

  Var x = reshape(features, Shape{n, c, hw});
  // center across spatial positions: Xc = X - X * J, J = 1/HW everywhere
  Var j = Var::constant(Tensor::full(Shape{hw, hw}, 1.0 / static_cast<double>(hw)));
  Var row_means = reshape(matmul(reshape(x, Shape{n * c, hw}), j), Shape{n, c, hw});
  Var xc = sub(x, row_means);
  Var cov = muls(bmm(xc, permute(xc, {0, 2, 1})), 1.0 / static_cast<double>(hw - 1));

  if (!sqrt_normalize) return triu_flatten(cov);

  // trace per sample via a diagonal selector
  Tensor diag_sel(Shape{c * c, 1});
  for (std::int64_t i = 0; i < c; ++i) diag_sel[i * c + i] = 1.0;
  Var tr = reshape(matmul(reshape(cov, Shape{n, c * c}), Var::constant(diag_sel)),
                   Shape{n});
  Var tr_eps = adds(tr, 1e-12);

  // pre-scale by trace so the Newton-Schulz iteration contracts
  Var inv_tr = div(Var::constant(Tensor::ones(Shape{n})), tr_eps);
  Shape cov_shape{n, c, c};
  Var a = mul(cov, batch_expand(inv_tr, cov_shape));

  Tensor eye_rep(cov_shape);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < c; ++i) eye_rep[(b * c + i) * c + i] = 1.0;
  }
  Tensor eye3 = eye_rep;
  for (std::int64_t i = 0; i < eye3.size(); ++i) eye3[i] *= 3.0;
  Var i3 = Var::constant(eye3);

  Var y = a;
  Var z = Var::constant(eye_rep);
  for (int k = 0; k < newton_steps; ++k) {
    Var t = muls(sub(i3, bmm(z, y)), 0.5);
    Var y_next = bmm(y, t);
    z = bmm(t, z);
    y = y_next;
  }
  // post-compensate the trace normalization
  Var s = mul(y, batch_expand(vsqrt(tr_eps), cov_shape));
  return triu_flatten(s);
}

Subnetwork::Subnetwork(const SubnetworkConfig& cfg_in, std::uint64_t seed)
    : cfg(cfg_in) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(seed, "subnetwork-init"));
  stem = nn::Conv2d(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, 1, rng);
  stem_bn = nn::BatchNorm2d(cfg.stem_channels, cfg.bn_momentum);
  std::int64_t prev = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
    const std::int64_t ch = cfg.block_channels[i];
    const std::int64_t stride = (i == 0) ? 1 : 2;  // downsample by striding only
    blocks.emplace_back(prev, ch, stride, cfg.use_shortcuts, cfg.bn_momentum, rng);
    prev = ch;
  }
  const std::int64_t fc_in =
      cfg.pooling == Pooling::GCP ? gcp_output_dim(prev) : prev;
  fc = nn::Linear(fc_in, cfg.num_classes, rng, /*with_bias=*/false);
}

Var Subnetwork::features(const Var& x) {
  Var h = relu(stem_bn.forward(stem.forward(x)));
  for (auto& b : blocks) h = b.forward(h);
  return h;
}

Var Subnetwork::forward(const Var& x) {
  Var h = features(x);
  Var pooled = cfg.pooling == Pooling::GCP
                   ? gcp_pool(h, cfg.gcp_newton_steps, cfg.gcp_sqrt_normalize)
                   : nn::global_avg_pool(h);
  return fc.forward(pooled);
}

void Subnetwork::set_training(bool on) {
  stem_bn.training = on;
  for (auto& b : blocks) b.set_training(on);
}

SubnetworkCensus Subnetwork::census() const {
  SubnetworkCensus c;
  c.front_avg_pool_ops = 0;  // downsampling is strided convolution throughout
  for (const auto& b : blocks) {
    if (b.has_add_junction()) ++c.add_junctions;
    if (b.conv1.stride > 1) ++c.strided_convs;
    if (b.proj && b.proj->stride > 1) ++c.strided_convs;
  }
  c.fc_params = fc.weight.val().size() + (fc.bias.defined() ? fc.bias.val().size() : 0);
  return c;
}

void Subnetwork::collect(const std::string& prefix, std::vector<nn::NamedVar>& params,
                         std::vector<nn::NamedTensor>& buffers) {
  stem.collect(prefix + ".stem", params);
  stem_bn.collect(prefix + ".stem_bn", params, buffers);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".block" + std::to_string(i), params, buffers);
  }
  fc.collect(prefix + ".fc", params);
}

DetectorScore fuse_scores(const std::array<double, 2>& z_image,
                          const std::array<double, 2>& z_gradient) {
  for (double v : z_image) {
    if (!std::isfinite(v)) throw NumericError("fuse_scores: non-finite image score");
  }
  for (double v : z_gradient) {
    if (!std::isfinite(v)) throw NumericError("fuse_scores: non-finite gradient score");
  }
  DetectorScore s;
  s.z_image = z_image;
  s.z_gradient = z_gradient;
  s.z_fused = {z_image[0] + z_gradient[0], z_image[1] + z_gradient[1]};
  return s;
}

LogitsFcBaseline::LogitsFcBaseline(std::int64_t in_dim_, std::uint64_t seed)
    : in_dim(in_dim_) {
  std::mt19937_64 rng(derive_seed(seed, "logits-fc-init"));
  fc1 = nn::Linear(in_dim, 512, rng, /*with_bias=*/true);
  fc2 = nn::Linear(512, 32, rng, /*with_bias=*/true);
  fc3 = nn::Linear(32, 2, rng, /*with_bias=*/false);
}

Var LogitsFcBaseline::forward(const Var& logits) const {
  return fc3.forward(relu(fc2.forward(relu(fc1.forward(logits)))));
}

std::int64_t LogitsFcBaseline::param_count() const {
  std::int64_t n = fc1.weight.val().size() + fc1.bias.val().size();
  n += fc2.weight.val().size() + fc2.bias.val().size();
  n += fc3.weight.val().size();
  return n;
}

void LogitsFcBaseline::collect(const std::string& prefix,
                               std::vector<nn::NamedVar>& params) {
  fc1.collect(prefix + ".fc1", params);
  fc2.collect(prefix + ".fc2", params);
  fc3.collect(prefix + ".fc3", params);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::image_only: return "image_only";
    case Variant::gradient_only: return "gradient_only";
    case Variant::gap: return "gap";
    case Variant::no_shortcut: return "no_shortcut";
    case Variant::logits_fc: return "logits_fc";
  }
  throw InvalidInputError("bad variant");
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::full, Variant::image_only, Variant::gradient_only,
                    Variant::gap, Variant::no_shortcut, Variant::logits_fc}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown detector variant: " + name);
}

TwoStreamDetector::TwoStreamDetector(Variant variant, const SubnetworkConfig& cfg,
                                     std::uint64_t seed,
                                     std::int64_t classifier_classes)
    : variant_(variant), cfg_(cfg), classifier_classes_(classifier_classes) {
  if (variant_ == Variant::gap) cfg_.pooling = Pooling::GAP;
  if (variant_ == Variant::no_shortcut) cfg_.use_shortcuts = false;
  if (variant_ == Variant::logits_fc) {
    if (classifier_classes_ < 2) {
      throw InvalidInputError("logits_fc variant needs the classifier class count");
    }
    logits_head_ = LogitsFcBaseline(classifier_classes_, seed);
    return;
  }
  // two identical architectures with independently initialized weights
  if (variant_ != Variant::gradient_only) {
    image_stream_ = Subnetwork(cfg_, derive_seed(seed, "image-stream"));
  }
  if (variant_ != Variant::image_only) {
    gradient_stream_ = Subnetwork(cfg_, derive_seed(seed, "gradient-stream"));
  }
}

bool TwoStreamDetector::uses_images() const { return image_stream_.has_value(); }

bool TwoStreamDetector::uses_gradients() const { return gradient_stream_.has_value(); }

Var TwoStreamDetector::fused_logits(const Var& images, const Var& gradients,
                                    const Var& logits) {
  if (variant_ == Variant::logits_fc) {
    if (!logits.defined()) throw InvalidInputError("logits_fc variant needs logits");
    return logits_head_->forward(logits);
  }
  Var zi, zg;
  if (image_stream_) {
    if (!images.defined()) throw InvalidInputError("detector needs images");
    zi = image_stream_->forward(images);
  }
  if (gradient_stream_) {
    if (!gradients.defined()) throw InvalidInputError("detector needs gradients");
    zg = gradient_stream_->forward(gradients);
  }
  if (zi.defined() && zg.defined()) return add(zi, zg);
  return zi.defined() ? zi : zg;
}

std::vector<DetectorScore> TwoStreamDetector::score(const Tensor& images,
                                                    const Tensor& gradients,
                                                    const Tensor& logits) {
  NoGradGuard ng;
  std::int64_t n = 0;
  Tensor zi, zg;
  if (variant_ == Variant::logits_fc) {
    n = logits.dim(0);
    zi = logits_head_->forward(Var::constant(logits)).val();
  } else {
    if (image_stream_) {
      n = images.dim(0);
      zi = image_stream_->forward(Var::constant(images)).val();
    }
    if (gradient_stream_) {
      if (image_stream_ && gradients.dim(0) != n) {
        throw InvalidInputError("detector: image/gradient count mismatch");
      }
      n = gradients.dim(0);
      zg = gradient_stream_->forward(Var::constant(gradients)).val();
    }
  }
  std::vector<DetectorScore> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::array<double, 2> a{0.0, 0.0}, b{0.0, 0.0};
    if (!zi.empty()) a = {zi[i * 2], zi[i * 2 + 1]};
    if (!zg.empty()) b = {zg[i * 2], zg[i * 2 + 1]};
    out.push_back(fuse_scores(a, b));
  }
  return out;
}

void TwoStreamDetector::set_training(bool on) {
  training_ = on;
  if (image_stream_) image_stream_->set_training(on);
  if (gradient_stream_) gradient_stream_->set_training(on);
}

std::vector<nn::NamedVar> TwoStreamDetector::named_params() {
  std::vector<nn::NamedVar> params;
  std::vector<nn::NamedTensor> buffers;
  if (image_stream_) image_stream_->collect("image_stream", params, buffers);
  if (gradient_stream_) gradient_stream_->collect("gradient_stream", params, buffers);
  if (logits_head_) logits_head_->collect("logits_head", params);
  return params;
}

std::vector<nn::NamedTensor> TwoStreamDetector::named_buffers() {
  std::vector<nn::NamedVar> params;
  std::vector<nn::NamedTensor> buffers;
  if (image_stream_) image_stream_->collect("image_stream", params, buffers);
  if (gradient_stream_) gradient_stream_->collect("gradient_stream", params, buffers);
  return buffers;
}

DetectionBatchResult detect(TwoStreamDetector& det, const Tensor& images,
                            const Tensor& gradients, const Tensor& logits,
                            std::int64_t batch_size) {
  if (det.training()) {
    throw InvalidInputError("detect: detector must be in evaluation mode");
  }
  std::int64_t n = 0;
  if (det.uses_logits()) {
    n = logits.dim(0);
  } else {
    n = det.uses_images() ? images.dim(0) : gradients.dim(0);
    if (det.uses_images() && det.uses_gradients() && !images.same_shape(gradients)) {
      throw InvalidInputError("detect: image/gradient shape mismatch");
    }
  }
  DetectionBatchResult result;
  for (std::int64_t off = 0; off < n; off += batch_size) {
    const std::int64_t take = std::min(batch_size, n - off);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
    std::iota(idx.begin(), idx.end(), off);
    Tensor bi = det.uses_images() ? gather_samples(images, idx) : Tensor();
    Tensor bg = det.uses_gradients() ? gather_samples(gradients, idx) : Tensor();
    Tensor bl = det.uses_logits() ? gather_samples(logits, idx) : Tensor();
    auto scores = det.score(bi, bg, bl);
    for (auto& s : scores) {
      result.decisions.push_back(s.decision());
      result.scores.push_back(s);
    }
  }
  return result;
}

void save_detector(TwoStreamDetector& det, const std::filesystem::path& dir,
                   const nlohmann::json& provenance) {
  ckpt::Checkpoint ckpt;
  const auto& cfg = det.config();
  ckpt.meta["kind"] = "detector";
  ckpt.meta["variant"] = variant_name(det.variant());
  ckpt.meta["classifier_classes"] = det.classifier_classes();
  ckpt.meta["config"] = {
      {"in_channels", cfg.in_channels},
      {"stem_kernel", cfg.stem_kernel},
      {"stem_channels", cfg.stem_channels},
      {"block_channels", cfg.block_channels},
      {"use_shortcuts", cfg.use_shortcuts},
      {"pooling", pooling_name(cfg.pooling)},
      {"num_classes", cfg.num_classes},
      {"gcp_newton_steps", cfg.gcp_newton_steps},
      {"gcp_sqrt_normalize", cfg.gcp_sqrt_normalize},
      {"bn_momentum", cfg.bn_momentum},
  };
  if (!provenance.is_null() && !provenance.empty()) {
    ckpt.meta["provenance"] = provenance;
  }
  for (auto& p : det.named_params()) ckpt.tensors.emplace(p.name, p.var.val());
  for (auto& b : det.named_buffers()) ckpt.tensors.emplace(b.name, *b.tensor);
  ckpt::save(dir, ckpt);
}

TwoStreamDetector load_detector(const std::filesystem::path& dir) {
  ckpt::Checkpoint ckpt = ckpt::load(dir);
  if (ckpt.meta.value("kind", "") != "detector") {
    throw LoadError("not a detector checkpoint: " + dir.string());
  }
  const auto& jc = ckpt.meta["config"];
  SubnetworkConfig cfg;
  cfg.in_channels = jc["in_channels"].get<std::int64_t>();
  cfg.stem_kernel = jc["stem_kernel"].get<std::int64_t>();
  cfg.stem_channels = jc["stem_channels"].get<std::int64_t>();
  cfg.block_channels = jc["block_channels"].get<std::vector<std::int64_t>>();
  cfg.use_shortcuts = jc["use_shortcuts"].get<bool>();
  cfg.pooling = pooling_from_name(jc["pooling"].get<std::string>());
  cfg.num_classes = jc["num_classes"].get<std::int64_t>();
  cfg.gcp_newton_steps = jc["gcp_newton_steps"].get<int>();
  cfg.gcp_sqrt_normalize = jc["gcp_sqrt_normalize"].get<bool>();
  cfg.bn_momentum = jc["bn_momentum"].get<double>();

  TwoStreamDetector det(variant_from_name(ckpt.meta["variant"].get<std::string>()),
                        cfg, /*seed=*/0,
                        ckpt.meta.value("classifier_classes", std::int64_t{0}));
  for (auto& p : det.named_params()) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw LoadError("missing tensor " + p.name);
    if (it->second.shape() != p.var.shape()) throw LoadError("shape mismatch " + p.name);
    p.var.val_mut() = it->second;
  }
  for (auto& b : det.named_buffers()) {
    auto it = ckpt.tensors.find(b.name);
    if (it == ckpt.tensors.end()) throw LoadError("missing buffer " + b.name);
    *b.tensor = it->second;
  }
  det.set_training(false);
  return det;
}

}  // namespace paca::detector
