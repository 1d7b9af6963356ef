#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hgpose/data.hpp"
#include "hgpose/evaluation.hpp"
#include "hgpose/geometry.hpp"
#include "hgpose/gradcheck.hpp"
#include "hgpose/loss.hpp"
#include "hgpose/model.hpp"

namespace hgpose {

struct SelfTestResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

namespace detail {

inline Quaternion random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_normalize({n(rng), n(rng), n(rng), n(rng)});
}

inline SelfTestResult selftest_geometry() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Quaternion q = canonical_sign(random_unit_quat(rng));
    const Quaternion back = rotmat_to_quat(quat_to_rotmat(q));
    worst = std::max({worst, std::abs(back.w - q.w), std::abs(back.x - q.x), std::abs(back.y - q.y), std::abs(back.z - q.z)});
    worst = std::max(worst, angular_error_deg(q, -q));
  }
  const double right = angular_error_deg({1, 0, 0, 0}, {std::sqrt(0.5), std::sqrt(0.5), 0, 0});
  const bool ok = worst <= 1e-6 && std::abs(right - 90.0) <= 1e-6 && angular_error_deg({1, 0, 0, 0}, {1, 0, 0, 0}) <= 1e-6;
  return {"geometry", ok, "max deviation " + format_g6(worst) + ", quarter turn " + format_g6(right) + " deg"};
}

inline SelfTestResult selftest_loss() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double affine = 0.0, scale = 0.0, grad = 0.0;
  for (int i = 0; i < 500; ++i) {
    PosePrediction p{{u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}};
    const Pose target{random_unit_quat(rng), {u(rng), u(rng), u(rng)}};
    const double beta = 0.5 + std::abs(u(rng)) * 4;
    const LossValue a = pose_loss(p, target, {1.0});
    const LossValue b = pose_loss(p, target, {beta});
    affine = std::max(affine, std::abs(b.total - (a.translation_term + beta * a.orientation_term)));
    PosePrediction scaled = p;
    scaled.q_raw = {p.q_raw.w * 3.5, p.q_raw.x * 3.5, p.q_raw.y * 3.5, p.q_raw.z * 3.5};
    scale = std::max(scale, std::abs(pose_loss(scaled, target, {beta}).total - b.total));
    if (a.translation_term < 1e-3 || a.orientation_term < 1e-3) continue;
    const LossGradient g = pose_loss_with_grad(p, target, {beta}).grad;
    const double h = 1e-6;
    double* fields[7] = {&p.q_raw.w, &p.q_raw.x, &p.q_raw.y, &p.q_raw.z, &p.t.x, &p.t.y, &p.t.z};
    const double analytic[7] = {g.q_raw[0], g.q_raw[1], g.q_raw[2], g.q_raw[3], g.t[0], g.t[1], g.t[2]};
    double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
    for (int k = 0; k < 7; ++k) {
      const double orig = *fields[k];
      *fields[k] = orig + h;
      const double up = pose_loss(p, target, {beta}).total;
      *fields[k] = orig - h;
      const double down = pose_loss(p, target, {beta}).total;
      *fields[k] = orig;
      const double numeric = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(analytic[k] - numeric));
      scale_a = std::max(scale_a, std::abs(analytic[k]));
      scale_n = std::max(scale_n, std::abs(numeric));
    }
    grad = std::max(grad, diff / std::max({scale_a, scale_n, 1e-12}));
  }
  const bool ok = affine <= 1e-12 && scale <= 1e-9 && grad <= 1e-6;
  return {"loss", ok,
          "affinity " + format_g6(affine) + ", scale " + format_g6(scale) + ", gradient rel " + format_g6(grad)};
}

inline SelfTestResult selftest_evaluation() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  bool ok = true;
  for (int trial = 0; trial < 50 && ok; ++trial) {
    std::vector<double> xs(1 + rng() % 60);
    for (auto& x : xs) x = u(rng);
    const double m = median(xs);
    std::shuffle(xs.begin(), xs.end(), rng);
    ok = ok && median(xs) == m;
    const auto edges = parse_edges("0:5:0.25");
    const auto cdf = cumulative_histogram(xs, edges).cdf;
    for (std::size_t i = 0; i < cdf.size(); ++i)
      ok = ok && cdf[i] >= 0.0 && cdf[i] <= 1.0 && (i == 0 || cdf[i] >= cdf[i - 1]);
    double sum = 0.0;
    for (double f : plain_histogram(xs, edges)) sum += f;
    ok = ok && std::abs(sum - 1.0) <= 1e-12;
  }
  ok = ok && median({1, 2, 3, 4}) == 2.5 && median({1, 2, 3}) == 2.0;
  return {"evaluation", ok, ok ? "median, cdf and histogram properties hold" : "property violated"};
}

inline SelfTestResult selftest_preprocess() {
  const auto [h, w] = rescaled_size(480, 640, 256);
  const PreprocessConfig pre;
  const CropOffsets off = crop_offsets(h, w, pre, nullptr);
  bool ok = h == 256 && w == 341 && off.row == 16 && off.col == 58;

  Image img;
  img.height = 20;
  img.width = 30;
  img.data.resize(20 * 30 * 3);
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.data) v = u(rng);
  const SceneStats stats{{0.4, 0.5, 0.6}, {0.2, 0.25, 0.3}};
  const PreprocessConfig small{20, 16, CropMode::TestCenter};
  const Tensor<double> x = preprocess<double>(img, stats, small, nullptr);
  const CropOffsets so = crop_offsets(20, 30, small, nullptr);
  double worst = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t q = 0; q < 16; ++q) {
        const double back = x.at(0, c, r, q) * stats.std[c] + stats.mean[c];
        worst = std::max(worst, std::abs(back - img.data[((r + so.row) * 30 + q + so.col) * 3 + c]));
      }
  ok = ok && worst <= 1e-6;
  return {"preprocess", ok,
          std::to_string(w) + "x" + std::to_string(h) + " offsets (" + std::to_string(off.row) + ", " +
              std::to_string(off.col) + "), inverse " + format_g6(worst)};
}

inline SelfTestResult selftest_gradients(std::size_t samples) {
  std::string detail;
  bool ok = true;
  for (auto variant : {NetworkVariant::Sum, NetworkVariant::Concat}) {
    HourglassNet<double> net(tiny_model_config(variant));
    init_parameters(net, 3);
    GradCheckOptions opt;
    opt.samples_per_type = samples;
    opt.frozen_batchnorm = true;
    for (const auto& r : check_gradients(net, 2, opt)) {
      ok = ok && r.failed == 0 && r.checked == samples;
      detail += std::string(detail.empty() ? "" : ", ") + to_string(variant) + "/" + to_string(r.layer) + " " +
                format_g6(r.max_rel_error);
    }
  }
  return {"gradients", ok, detail};
}

inline SelfTestResult selftest_finiteness() {
  bool ok = true;
  for (auto variant : {NetworkVariant::Sum, NetworkVariant::Concat}) {
    HourglassNet<float> net(tiny_model_config(variant, 64));
    init_parameters(net, 9);
    Tensor<float> x({2, 3, 64, 64});
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    for (auto& v : x.values()) v = u(rng);
    ActivationTrace trace;
    (void)net.forward_eval(x, &trace);
    ok = ok && trace.all_finite;
    const NetworkOutput<float> out = net.forward_train(x, rng);
    std::vector<Pose> targets(2, Pose{{1, 0, 0, 0}, {0.5, -0.5, 1}});
    const auto lg = batch_pose_loss_grad(out, std::span<const Pose>(targets), {});
    net.zero_grad();
    net.backward(lg.grad_q, lg.grad_t);
    net.visit([&](const std::string&, const Parameter<float>& p) {
      if (is_trainable(p.kind)) ok = ok && p.grad.all_finite();
    });
  }
  return {"finiteness", ok, ok ? "activations and gradients finite" : "non-finite value found"};
}

}  // namespace detail

/// Fast property checks over the library; used by `hgpose selftest`.
inline std::vector<SelfTestResult> run_selftest(std::size_t gradient_samples = 40) {
  std::vector<std::function<SelfTestResult()>> checks{
      detail::selftest_geometry,   detail::selftest_loss,       detail::selftest_evaluation,
      detail::selftest_preprocess, [&] { return detail::selftest_gradients(gradient_samples); },
      detail::selftest_finiteness};
  std::vector<SelfTestResult> out;
  for (auto& check : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({"?", false, e.what()});
    }
  }
  return out;
}

}  // namespace hgpose
