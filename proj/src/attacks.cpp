// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "paca/error.hpp"
#include "paca/gradient_generator.hpp"
#include "paca/nn.hpp"
#include "paca/rng.hpp"

namespace paca::attacks {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<std::int64_t> chunk_indices(std::int64_t off, std::int64_t take) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
  std::iota(idx.begin(), idx.end(), off);
  return idx;
}

// strongest class per row excluding the protected index
std::vector<std::int64_t> best_other_rows(const Tensor& z,
                                          const std::vector<std::int64_t>& orig) {
  const std::int64_t n = z.dim(0), m = z.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = -1;
    for (std::int64_t j = 0; j < m; ++j) {
      if (j == orig[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || z[i * m + j] > z[i * m + best]) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

core::AdversarialRecord make_record(const std::string& attack, const Tensor& clean_img,
                                    Tensor adv_img, std::int64_t original_index,
                                    std::int64_t orig_label, std::int64_t adv_label,
                                    std::int64_t dataset_label, bool success,
                                    std::map<std::string, double> params) {
  core::AdversarialRecord rec;
  rec.attack_name = attack;
  rec.adversarial = std::move(adv_img);
  rec.original_index = original_index;
  rec.orig_label = orig_label;
  rec.adv_label = adv_label;
  rec.dataset_label = dataset_label;
  rec.success = success;
  rec.params = std::move(params);
  core::Norms n = core::perturbation_norms(clean_img, rec.adversarial);
  rec.dist_l1 = n.l1;
  rec.dist_l2 = n.l2;
  rec.dist_linf = n.linf;
  return rec;
}

void finalize_stats(AttackResult& result) {
  double n_success = 0.0, l2_success = 0.0, l2_all = 0.0;
  for (const auto& r : result.records) {
    l2_all += r.dist_l2;
    if (r.success) {
      n_success += 1.0;
      l2_success += r.dist_l2;
    }
  }
  const double n = static_cast<double>(result.records.size());
  result.success_rate = n > 0 ? n_success / n : 0.0;
  result.mean_l2 = n_success > 0 ? l2_success / n_success : 0.0;
  result.mean_l2_all = n > 0 ? l2_all / n : 0.0;
}

double per_sample_l2(const Tensor& a, const Tensor& b, std::int64_t i,
                     std::int64_t stride) {
  double s = 0.0;
  for (std::int64_t k = 0; k < stride; ++k) {
    const double d = a[i * stride + k] - b[i * stride + k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

void AttackConfig::validate() const {
  if (iterations < 1) throw InvalidInputError("attack: iterations must be >= 1");
  if (name == "pgd") {
    if (epsilon < 0.0) throw InvalidInputError("pgd: epsilon must be >= 0");
    if (alpha <= 0.0) throw InvalidInputError("pgd: alpha must be > 0");
  }
  if (name == "cw" || name == "cw_paca") {
    if (binary_search_steps < 1) {
      throw InvalidInputError("cw: binary_search_steps must be >= 1");
    }
    if (lr <= 0.0) throw InvalidInputError("cw: lr must be > 0");
  }
  if (name == "ddn") {
    if (init_norm <= 0.0) throw InvalidInputError("ddn: init_norm must be > 0");
    if (gamma <= 0.0 || gamma >= 1.0) throw InvalidInputError("ddn: gamma in (0,1)");
  }
  if (batch_size < 1) throw InvalidInputError("attack: batch_size must be >= 1");
}

AttackConfig default_config(const std::string& name) {
  AttackConfig cfg;
  cfg.name = name;
  if (name == "pgd") {
    cfg.epsilon = 0.03;
    cfg.alpha = 0.005;
    cfg.iterations = 10;
  } else if (name == "cw") {
    cfg.kappa = 1.0;
    cfg.binary_search_steps = 1;
    cfg.iterations = 500;
    cfg.lr = 0.01;
  } else if (name == "ddn") {
    cfg.iterations = 100;
    cfg.init_norm = 1.0;
    cfg.gamma = 0.05;
    cfg.lr = 1.0;
  } else if (name == "cw_paca") {
    cfg.kappa = 1.0;
    cfg.binary_search_steps = 1;
    cfg.iterations = 500;
    cfg.lr = 0.01;
    cfg.detector_weight = 1.0;
  }
  return cfg;
}

// ---- PGD ----

AttackResult pgd_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                        const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.name = "pgd";
  c.validate();
  images.validate();

  const std::int64_t n = images.count();
  std::mt19937_64 start_rng(derive_seed(c.seed, "pgd-random-start"));

  AttackResult result;
  for (std::int64_t off = 0; off < n; off += c.batch_size) {
    const std::int64_t take = std::min(c.batch_size, n - off);
    Tensor x0 = gather_samples(images.pixels, chunk_indices(off, take));
    std::vector<std::int64_t> orig = model.predict(x0);

    Tensor x = x0;
    if (c.random_start) {
      std::uniform_real_distribution<double> u(-c.epsilon, c.epsilon);
      for (std::int64_t i = 0; i < x.size(); ++i) {
        x[i] = std::clamp(x[i] + u(start_rng), 0.0, 1.0);
      }
    }
    for (std::int64_t it = 0; it < c.iterations; ++it) {
      Var xv(x, /*requires_grad=*/true);
      Var loss = nn::cross_entropy_sum(model.forward(xv), orig);
      Tensor g = grad(loss, {xv})[0].val();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const double step = g[i] > 0.0 ? c.alpha : (g[i] < 0.0 ? -c.alpha : 0.0);
        double v = x[i] + step;
        v = std::clamp(v, x0[i] - c.epsilon, x0[i] + c.epsilon);
        x[i] = std::clamp(v, 0.0, 1.0);
      }
    }
    std::vector<std::int64_t> adv_pred = model.predict(x);
    for (std::int64_t i = 0; i < take; ++i) {
      auto si = static_cast<std::size_t>(i);
      Tensor clean_i = slice_sample(x0, i);
      Tensor adv_i = slice_sample(x, i);
      const bool success = adv_pred[si] != orig[si];
      result.records.push_back(make_record(
          "pgd", clean_i, std::move(adv_i), off + i, orig[si], adv_pred[si],
          images.labels[static_cast<std::size_t>(off + i)], success,
          {{"epsilon", c.epsilon},
           {"alpha", c.alpha},
           {"iterations", static_cast<double>(c.iterations)}}));
    }
  }
  finalize_stats(result);
  return result;
}

// ---- C&W core (plain and adaptive share this optimizer loop) ----

namespace {

AttackResult cw_core(const ClassifierHandle& model, detector::TwoStreamDetector* det,
                     const core::ImageBatch& images, const AttackConfig& cfg,
                     const std::string& record_name) {
  images.validate();
  const bool use_detector = det != nullptr && cfg.detector_weight != 0.0;

  const std::int64_t n = images.count();
  AttackResult result;

  for (std::int64_t off = 0; off < n; off += cfg.batch_size) {
    const std::int64_t take = std::min(cfg.batch_size, n - off);
    Tensor x0 = gather_samples(images.pixels, chunk_indices(off, take));
    const std::int64_t stride = x0.size() / take;
    std::vector<std::int64_t> orig = model.predict(x0);

    // tanh-space initialization at the clean image
    Tensor w0 = Tensor::uninit(x0.shape());
    for (std::int64_t i = 0; i < x0.size(); ++i) {
      const double xc = std::clamp(x0[i], 1e-6, 1.0 - 1e-6);
      w0[i] = std::atanh(2.0 * xc - 1.0);
    }
    Var x0v = Var::constant(x0);

    std::vector<double> c_coef(static_cast<std::size_t>(take), 1.0);
    Tensor best_adv = x0;
    std::vector<double> best_l2(static_cast<std::size_t>(take),
                                std::numeric_limits<double>::infinity());
    std::vector<std::int64_t> best_label = orig;
    std::vector<char> succeeded(static_cast<std::size_t>(take), 0);
    Tensor last_adv = x0;
    std::vector<std::int64_t> last_pred = orig;

    for (std::int64_t bss = 0; bss < cfg.binary_search_steps; ++bss) {
      Var w(w0, /*requires_grad=*/true);
      nn::Adam optim({w}, cfg.lr);
      std::vector<char> success_this_step(static_cast<std::size_t>(take), 0);

      for (std::int64_t it = 0; it < cfg.iterations; ++it) {
        Var x_adv = muls(adds(vtanh(w), 1.0), 0.5);
        Var z = model.forward(x_adv);
        const Tensor& zt = z.val();

        std::vector<std::int64_t> other = best_other_rows(zt, orig);
        Var orig_logit = take_per_row(z, orig);
        Var other_logit = take_per_row(z, other);
        Var jf = relu(adds(sub(orig_logit, other_logit), cfg.kappa));  // [take]

        Var diff = sub(x_adv, x0v);
        Var l2sq = sum_keep_batch(mul(diff, diff));  // [take]

        Var cvec = Var::constant(
            Tensor(Shape{take}, std::vector<double>(c_coef.begin(), c_coef.end())));
        Var objective = add(l2sq, mul(cvec, jf));

        std::vector<char> det_clean;
        if (use_detector) {
          Var gabs = gradgen::confidence_gradient_var(model, x_adv,
                                                      cfg.exact_second_order);
          Var fused = det->fused_logits(x_adv, gabs, Var());  // [take,2]
          Var s_clean = take_per_row(fused, std::vector<std::int64_t>(take, 0));
          Var s_adv = take_per_row(fused, std::vector<std::int64_t>(take, 1));
          Var jd = relu(adds(sub(s_adv, s_clean), cfg.kappa_detector));
          objective = add(objective, muls(jd, cfg.detector_weight));
          det_clean.resize(static_cast<std::size_t>(take));
          for (std::int64_t i = 0; i < take; ++i) {
            det_clean[static_cast<std::size_t>(i)] =
                fused.val()[i * 2 + 1] > fused.val()[i * 2] ? 0 : 1;
          }
        }

        for (std::int64_t i = 0; i < take; ++i) {
          if (!std::isfinite(objective.val()[i])) {
            throw NumericError(record_name + ": non-finite objective for image " +
                               std::to_string(off + i));
          }
        }

        // candidate bookkeeping: classifier margin attained (jf == 0), and
        // for the adaptive attack the detector must answer "clean"
        const Tensor& jft = jf.val();
        for (std::int64_t i = 0; i < take; ++i) {
          auto si = static_cast<std::size_t>(i);
          const bool margin_ok =
              jft[i] <= 0.0 &&
              argmax_vec(zt.data() + i * zt.dim(1), zt.dim(1)) != orig[si];
          const bool clean_ok = !use_detector || det_clean[si];
          if (margin_ok && clean_ok) {
            const double l2 = per_sample_l2(x_adv.val(), x0, i, stride);
            success_this_step[si] = 1;
            succeeded[si] = 1;
            if (l2 < best_l2[si]) {
              best_l2[si] = l2;
              best_label[si] = argmax_vec(zt.data() + i * zt.dim(1), zt.dim(1));
              for (std::int64_t k = 0; k < stride; ++k) {
                best_adv[i * stride + k] = x_adv.val()[i * stride + k];
              }
            }
          }
        }

        Var loss = sum_all(objective);
        optim.step(grad(loss, {w}));

        if (it + 1 == cfg.iterations) {
          NoGradGuard ng;
          Var x_fin = muls(adds(vtanh(w), 1.0), 0.5);
          last_adv = x_fin.val();
          last_pred = model.predict(last_adv);
        }
      }

      // constant search: relax c after a success, push harder after a failure
      for (std::int64_t i = 0; i < take; ++i) {
        auto si = static_cast<std::size_t>(i);
        c_coef[si] *= success_this_step[si] ? 0.5 : 10.0;
      }
    }

    for (std::int64_t i = 0; i < take; ++i) {
      auto si = static_cast<std::size_t>(i);
      Tensor clean_i = slice_sample(x0, i);
      const bool ok = succeeded[si] != 0;
      Tensor adv_i = ok ? slice_sample(best_adv, i) : slice_sample(last_adv, i);
      const std::int64_t label = ok ? best_label[si] : last_pred[si];
      std::map<std::string, double> params = {
          {"kappa", cfg.kappa},
          {"iterations", static_cast<double>(cfg.iterations)},
          {"binary_search_steps", static_cast<double>(cfg.binary_search_steps)},
          {"lr", cfg.lr}};
      if (det != nullptr) {
        params["detector_weight"] = cfg.detector_weight;
        params["kappa_detector"] = cfg.kappa_detector;
        params["exact_second_order"] = cfg.exact_second_order ? 1.0 : 0.0;
      }
      result.records.push_back(
          make_record(record_name, clean_i, std::move(adv_i), off + i, orig[si], label,
                      images.labels[static_cast<std::size_t>(off + i)], ok,
                      std::move(params)));
    }
  }
  finalize_stats(result);
  return result;
}

}  // namespace

AttackResult cw_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                       const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.name = "cw";
  c.validate();
  return cw_core(model, nullptr, images, c, "cw");
}

AttackResult cw_paca_attack(const ClassifierHandle& model,
                            detector::TwoStreamDetector& det,
                            const core::ImageBatch& images, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.name = "cw_paca";
  c.validate();
  if (det.training()) {
    throw InvalidInputError("cw_paca: detector must be in evaluation mode");
  }
  return cw_core(model, &det, images, c, "cw_paca");
}

// ---- DDN ----

AttackResult ddn_attack(const ClassifierHandle& model, const core::ImageBatch& images,
                        const AttackConfig& cfg, DdnTrace* trace) {
  AttackConfig c = cfg;
  c.name = "ddn";
  c.validate();
  images.validate();

  const std::int64_t n = images.count();
  AttackResult result;
  if (trace) {
    trace->target_norms.assign(static_cast<std::size_t>(n), {});
    trace->iterate_l2.assign(static_cast<std::size_t>(n), {});
    trace->iterate_adversarial.assign(static_cast<std::size_t>(n), {});
  }

  for (std::int64_t off = 0; off < n; off += c.batch_size) {
    const std::int64_t take = std::min(c.batch_size, n - off);
    Tensor x0 = gather_samples(images.pixels, chunk_indices(off, take));
    const std::int64_t stride = x0.size() / take;
    std::vector<std::int64_t> orig = model.predict(x0);

    Tensor delta(x0.shape());
    std::vector<double> target_norm(static_cast<std::size_t>(take), c.init_norm);
    Tensor best_adv = x0;
    std::vector<double> best_l2(static_cast<std::size_t>(take),
                                std::numeric_limits<double>::infinity());
    std::vector<std::int64_t> best_label = orig;
    std::vector<char> succeeded(static_cast<std::size_t>(take), 0);
    Tensor last_x = x0;
    std::vector<std::int64_t> last_pred = orig;

    auto consider = [&](const Tensor& x_t, const Tensor& zt) {
      std::vector<char> adv_now(static_cast<std::size_t>(take), 0);
      for (std::int64_t i = 0; i < take; ++i) {
        auto si = static_cast<std::size_t>(i);
        const std::int64_t pred = argmax_vec(zt.data() + i * zt.dim(1), zt.dim(1));
        const bool is_adv = pred != orig[si];
        adv_now[si] = is_adv ? 1 : 0;
        if (is_adv) {
          const double l2 = per_sample_l2(x_t, x0, i, stride);
          succeeded[si] = 1;
          if (l2 < best_l2[si]) {
            best_l2[si] = l2;
            best_label[si] = pred;
            for (std::int64_t k = 0; k < stride; ++k) {
              best_adv[i * stride + k] = x_t[i * stride + k];
            }
          }
        }
      }
      return adv_now;
    };

    for (std::int64_t it = 0; it < c.iterations; ++it) {
      Tensor x_t = Tensor::uninit(x0.shape());
      for (std::int64_t i = 0; i < x_t.size(); ++i) {
        x_t[i] = std::clamp(x0[i] + delta[i], 0.0, 1.0);
      }
      Var xv(x_t, /*requires_grad=*/true);
      Var z = model.forward(xv);
      std::vector<char> adv_now = consider(x_t, z.val());

      if (trace) {
        for (std::int64_t i = 0; i < take; ++i) {
          auto si = static_cast<std::size_t>(off + i);
          trace->target_norms[si].push_back(target_norm[static_cast<std::size_t>(i)]);
          trace->iterate_l2[si].push_back(per_sample_l2(x_t, x0, i, stride));
          trace->iterate_adversarial[si].push_back(adv_now[static_cast<std::size_t>(i)]);
        }
      }

      Var loss = nn::cross_entropy_sum(z, orig);
      Tensor g = grad(loss, {xv})[0].val();

      // cosine-decayed step along the normalized ascent direction
      const double step = c.lr * 0.5 *
                          (1.0 + std::cos(kPi * static_cast<double>(it) /
                                          static_cast<double>(c.iterations)));
      for (std::int64_t i = 0; i < take; ++i) {
        auto si = static_cast<std::size_t>(i);
        double gn = 0.0;
        for (std::int64_t k = 0; k < stride; ++k) {
          gn += g[i * stride + k] * g[i * stride + k];
        }
        gn = std::sqrt(gn);
        if (gn > 0.0) {
          for (std::int64_t k = 0; k < stride; ++k) {
            delta[i * stride + k] += step * g[i * stride + k] / gn;
          }
        }
        // decay the target norm while adversarial, grow it otherwise
        target_norm[si] *= adv_now[si] ? (1.0 - c.gamma) : (1.0 + c.gamma);
        double dn = 0.0;
        for (std::int64_t k = 0; k < stride; ++k) {
          dn += delta[i * stride + k] * delta[i * stride + k];
        }
        dn = std::sqrt(dn);
        if (dn > 0.0) {
          const double scale = target_norm[si] / dn;
          for (std::int64_t k = 0; k < stride; ++k) delta[i * stride + k] *= scale;
        }
      }
    }
    // final candidate after the last update
    {
      Tensor x_t = Tensor::uninit(x0.shape());
      for (std::int64_t i = 0; i < x_t.size(); ++i) {
        x_t[i] = std::clamp(x0[i] + delta[i], 0.0, 1.0);
      }
      Tensor zt = model.logits(x_t);
      consider(x_t, zt);
      last_x = x_t;
      last_pred = argmax_rows(zt);
    }

    for (std::int64_t i = 0; i < take; ++i) {
      auto si = static_cast<std::size_t>(i);
      Tensor clean_i = slice_sample(x0, i);
      const bool ok = succeeded[si] != 0;
      Tensor adv_i = ok ? slice_sample(best_adv, i) : slice_sample(last_x, i);
      result.records.push_back(make_record(
          "ddn", clean_i, std::move(adv_i), off + i, orig[si],
          ok ? best_label[si] : last_pred[si],
          images.labels[static_cast<std::size_t>(off + i)], ok,
          {{"iterations", static_cast<double>(c.iterations)},
           {"init_norm", c.init_norm},
           {"gamma", c.gamma},
           {"lr", c.lr}}));
    }
  }
  finalize_stats(result);
  return result;
}

// ---- registry ----

namespace {
std::map<std::string, AttackFn>& registry() {
  static std::map<std::string, AttackFn> reg = {
      {"pgd",
       [](const ClassifierHandle& m, const core::ImageBatch& i, const AttackConfig& c) {
         return pgd_attack(m, i, c);
       }},
      {"cw",
       [](const ClassifierHandle& m, const core::ImageBatch& i, const AttackConfig& c) {
         return cw_attack(m, i, c);
       }},
      {"ddn",
       [](const ClassifierHandle& m, const core::ImageBatch& i, const AttackConfig& c) {
         return ddn_attack(m, i, c);
       }},
  };
  return reg;
}
}  // namespace

void register_attack(const std::string& name, AttackFn fn) {
  auto [it, inserted] = registry().emplace(name, std::move(fn));
  if (!inserted) {
    throw RegistrationError("attack already registered: " + name);
  }
}

bool attack_registered(const std::string& name) { return registry().count(name) > 0; }

std::vector<std::string> registered_attacks() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

AttackResult run_attack(const std::string& name, const ClassifierHandle& model,
                        const core::ImageBatch& images, const AttackConfig& cfg) {
  auto it = registry().find(name);
  if (it == registry().end()) {
    throw InvalidInputError("unknown attack: " + name);
  }
  AttackResult result = it->second(model, images, cfg);
  for (auto& rec : result.records) rec.attack_name = name;
  return result;
}

std::int64_t verify_records(const ClassifierHandle& model,
                            const core::ImageBatch& clean,
                            const std::vector<core::AdversarialRecord>& records) {
  std::int64_t n_success = 0;
  for (const auto& rec : records) {
    Tensor clean_i = slice_sample(clean.pixels, rec.original_index);
    core::validate_record(clean_i, rec);
    Shape batched = rec.adversarial.shape();
    batched.insert(batched.begin(), 1);
    Tensor x = rec.adversarial.reshaped(batched);
    const std::int64_t pred = model.predict(x)[0];
    if (pred != rec.adv_label) {
      throw NumericError("record " + std::to_string(rec.original_index) +
                         ": stored adversarial label does not re-verify");
    }
    // success means the classifier is still fooled on a fresh pass; for
    // margin-based attacks a failed record may sit below the margin yet past
    // the boundary, so the implication is one-directional
    if (rec.success && pred == rec.orig_label) {
      throw NumericError("record " + std::to_string(rec.original_index) +
                         ": stored success flag does not re-verify");
    }
    if (rec.success) ++n_success;
  }
  return n_success;
}

}  // namespace paca::attacks
