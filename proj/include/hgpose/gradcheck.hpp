#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hgpose/loss.hpp"
#include "hgpose/model.hpp"

namespace hgpose {

/// Finite-difference comparison for one layer family.
struct GradCheckReport {
  LayerType layer = LayerType::Conv;
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t skipped_kinks = 0;  // perturbation changed the ReLU/max-pool pattern
  double max_rel_error = 0.0;
};

struct GradCheckOptions {
  std::size_t samples_per_type = 200;
  double step = 1e-3;
  int stencil_points = 2;  // central difference with 2, 4 or 6 evaluations
  double tolerance = 1e-4;  // relative
  double beta = 1.0;
  std::uint64_t seed = 7;
  // Normalize with running statistics warmed up on the check batch instead of
  // live batch statistics.
  bool frozen_batchnorm = false;
  std::size_t warmup_passes = 40;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

/// Central differences of the batch loss against backpropagated gradients on
/// a random batch. Dropout masks are fixed by reseeding per evaluation.
template <typename T>
std::vector<GradCheckReport> check_gradients(HourglassNet<T>& model, std::size_t batch, const GradCheckOptions& opt) {
  const ModelConfig& cfg = model.config();
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<T> images({batch, 3, cfg.input_height, cfg.input_width});
  for (auto& v : images.values()) v = static_cast<T>(u(rng));
  std::vector<Pose> targets(batch);
  for (auto& p : targets) {
    p.q = canonical_sign(quat_normalize({u(rng), u(rng), u(rng), u(rng)}));
    p.t = {u(rng), u(rng), u(rng)};
  }
  const LossParams lp{opt.beta};

  auto evaluate = [&](std::uint64_t* signature) {
    std::mt19937_64 drop(opt.seed ^ 0xD20Fu);
    const NetworkOutput<T> out = model.forward_train(images, drop);
    if (signature) *signature = model.activation_signature();
    const auto preds = to_predictions(out);
    return batch_pose_loss(preds, targets, lp).total;
  };

  model.set_batchnorm_frozen(false);
  if (opt.frozen_batchnorm) {
    std::mt19937_64 warm(opt.seed);
    for (std::size_t i = 0; i < opt.warmup_passes; ++i) model.forward_train(images, warm);
    model.set_batchnorm_frozen(true);
  }

  model.zero_grad();
  std::mt19937_64 drop(opt.seed ^ 0xD20Fu);
  const NetworkOutput<T> out = model.forward_train(images, drop);
  const std::uint64_t base_sig = model.activation_signature();
  const auto lg = batch_pose_loss_grad(out, std::span<const Pose>(targets), lp);
  model.backward(lg.grad_q, lg.grad_t);

  struct Slot {
    Parameter<T>* param;
    std::size_t index;
  };
  std::map<LayerType, std::vector<Parameter<T>*>> by_type;
  model.visit([&](const std::string&, Parameter<T>& p) {
    if (is_trainable(p.kind)) by_type[p.layer].push_back(&p);
  });

  std::vector<GradCheckReport> reports;
  for (auto& [type, params] : by_type) {
    std::vector<Slot> slots;
    for (auto* p : params)
      for (std::size_t i = 0; i < p->value.size(); ++i) slots.push_back({p, i});
    std::shuffle(slots.begin(), slots.end(), rng);
    GradCheckReport rep;
    rep.layer = type;
    for (const Slot& s : slots) {
      if (rep.checked >= opt.samples_per_type) break;
      T& v = s.param->value[s.index];
      const T orig = v;
      const T h = static_cast<T>(opt.step);
      bool kink = false;
      auto at = [&](T offset) {
        std::uint64_t sig = 0;
        v = orig + offset;
        const double f = evaluate(&sig);
        kink = kink || sig != base_sig;
        return f;
      };
      auto diff = [&](int k) { return at(static_cast<T>(k) * h) - at(-static_cast<T>(k) * h); };
      double numeric = 0.0;
      if (opt.stencil_points == 6)
        numeric = (45.0 * diff(1) - 9.0 * diff(2) + diff(3)) / (60.0 * opt.step);
      else if (opt.stencil_points == 4)
        numeric = (8.0 * diff(1) - diff(2)) / (12.0 * opt.step);
      else
        numeric = diff(1) / (2.0 * opt.step);
      v = orig;
      if (kink) {
        ++rep.skipped_kinks;
        continue;
      }
      const double err = relative_error(static_cast<double>(s.param->grad[s.index]), numeric);
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      ++rep.checked;
      if (err > opt.tolerance) ++rep.failed;
    }
    reports.push_back(rep);
  }
  model.set_batchnorm_frozen(false);
  return reports;
}

/// Tiny network used for gradient and overfitting checks.
inline ModelConfig tiny_model_config(NetworkVariant variant, std::size_t input = 32) {
  ModelConfig c;
  c.variant = variant;
  c.input_height = c.input_width = input;
  c.width_multiplier = 0.125;
  return c;
}

}  // namespace hgpose
