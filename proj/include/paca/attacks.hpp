// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "paca/classifier.hpp"
#include "paca/core.hpp"
#include "paca/detector.hpp"

namespace paca::attacks {

// Hyperparameters shared by all attack families; each attack reads the
// fields that apply to it.
struct AttackConfig {
  std::string name;
  double epsilon = 0.03;             // PGD linf budget
  double alpha = 0.005;              // PGD step size
  std::int64_t iterations = 10;
  double kappa = 1.0;                // classifier confidence margin
  std::int64_t binary_search_steps = 1;
  double lr = 0.01;                  // optimizer step size (CW/DDN)
  double init_norm = 1.0;            // DDN starting target norm
  double gamma = 0.05;               // DDN norm adjustment rate
  double detector_weight = 1.0;      // weight of the detector term
  double kappa_detector = 0.0;       // detector margin in the adaptive objective
  bool random_start = false;         // PGD random initialization
  bool exact_second_order = true;    // adaptive attack: differentiate through |g|
  std::int64_t batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Paper-default hyperparameters per attack family.
AttackConfig default_config(const std::string& name);

struct AttackResult {
  std::vector<core::AdversarialRecord> records;  // one per attempted image
  double success_rate = 0.0;
  double mean_l2 = 0.0;      // over successful records only
  double mean_l2_all = 0.0;  // over every attempted record
};

// Optional DDN diagnostics for the bookkeeping-contract checks.
struct DdnTrace {
  // [sample][iteration]
  std::vector<std::vector<double>> target_norms;
  std::vector<std::vector<double>> iterate_l2;
  std::vector<std::vector<char>> iterate_adversarial;
};

// Untargeted attacks; the "original" label is the model's clean prediction.
AttackResult pgd_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                        const AttackConfig& cfg);
AttackResult cw_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                       const AttackConfig& cfg);
AttackResult ddn_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                        const AttackConfig& cfg, DdnTrace* trace = nullptr);

// Adaptive attack against classifier + detector: minimizes
// ||delta||^2 + c*J_F + detector_weight*J_D where J_D penalizes being
// detected. J_D's forward pass recomputes the confidence gradient, so its
// backward differentiates through a gradient (exact by default, first-order
// refresh when exact_second_order is off). Success means the classifier is
// fooled AND the detector answers "clean".
AttackResult cw_paca_attack(const ClassifierHandle& model,
                            detector::TwoStreamDetector& det,
                            const core::ImageBatch& images, const AttackConfig& cfg);

// ---- registry (extension point for further attack families) ----
using AttackFn = std::function<AttackResult(const ClassifierHandle&,
                                            const core::ImageBatch&,
                                            const AttackConfig&)>;
void register_attack(const std::string& name, AttackFn fn);
bool attack_registered(const std::string& name);
std::vector<std::string> registered_attacks();
AttackResult run_attack(const std::string& name, const ClassifierHandle& model,
                        const core::ImageBatch& images, const AttackConfig& cfg);

// Re-verifies stored success flags with a fresh forward pass; throws
// NumericError on any mismatch. Returns the number of successful records.
std::int64_t verify_records(const ClassifierHandle& model,
                            const core::ImageBatch& clean,
                            const std::vector<core::AdversarialRecord>& records);

}  // namespace paca::attacks
