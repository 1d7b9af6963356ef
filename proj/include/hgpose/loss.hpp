#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "hgpose/geometry.hpp"
#include "hgpose/model.hpp"

namespace hgpose {

struct LossParams {
  double beta = 1.0;  // orientation weight; useful range is roughly [1, 10]
};

struct LossValue {
  double total = 0.0;
  double translation_term = 0.0;  // meters
  double orientation_term = 0.0;  // before weighting by beta
  double beta_used = 1.0;
};

/// Gradient of the loss with respect to the raw prediction.
struct LossGradient {
  std::array<double, 4> q_raw{};
  std::array<double, 3> t{};
};

struct LossWithGradient {
  LossValue value;
  LossGradient grad;
};

/// ||t - t_hat|| + beta * ||q - q_hat / ||q_hat||||, with its gradient.
/// At an exactly zero residual the zero subgradient is used.
inline LossWithGradient pose_loss_with_grad(const PosePrediction& pred, const Pose& target, const LossParams& params) {
  if (!(params.beta > 0.0)) fail(ErrorCode::InvalidConfig, "beta must be positive");
  if (!(std::abs(target.q.norm() - 1.0) <= 1e-6)) fail(ErrorCode::NonUnitTarget, "target quaternion is not unit norm");
  const double qn = pred.q_raw.norm();
  if (!(qn > kMinQuaternionNorm)) fail(ErrorCode::ZeroNormPrediction, "predicted quaternion has zero norm");

  LossWithGradient out;
  const std::array<double, 3> dt{pred.t.x - target.t.x, pred.t.y - target.t.y, pred.t.z - target.t.z};
  const double lt = std::sqrt(dt[0] * dt[0] + dt[1] * dt[1] + dt[2] * dt[2]);
  if (lt > 0.0)
    for (int i = 0; i < 3; ++i) out.grad.t[i] = dt[i] / lt;

  const std::array<double, 4> raw{pred.q_raw.w, pred.q_raw.x, pred.q_raw.y, pred.q_raw.z};
  const std::array<double, 4> tq{target.q.w, target.q.x, target.q.y, target.q.z};
  std::array<double, 4> u{}, r{};
  double lq2 = 0.0;
  for (int i = 0; i < 4; ++i) {
    u[i] = raw[i] / qn;
    r[i] = tq[i] - u[i];
    lq2 += r[i] * r[i];
  }
  const double lq = std::sqrt(lq2);
  if (lq > 0.0) {
    // dL/du = -r / lq, du/dq_raw = (I - u u^T) / ||q_raw||
    double u_dot = 0.0;
    for (int i = 0; i < 4; ++i) u_dot += u[i] * (-r[i] / lq);
    for (int i = 0; i < 4; ++i) out.grad.q_raw[i] = params.beta * ((-r[i] / lq) - u[i] * u_dot) / qn;
  }
  out.value = {lt + params.beta * lq, lt, lq, params.beta};
  return out;
}

inline LossValue pose_loss(const PosePrediction& pred, const Pose& target, const LossParams& params) {
  return pose_loss_with_grad(pred, target, params).value;
}

/// Mean over the batch of the per-sample values.
inline LossValue batch_pose_loss(std::span<const PosePrediction> preds, std::span<const Pose> targets,
                                 const LossParams& params) {
  if (preds.empty()) fail(ErrorCode::EmptyBatch, "no samples");
  if (preds.size() != targets.size()) fail(ErrorCode::ShapeMismatch, "prediction and target counts differ");
  LossValue acc{0.0, 0.0, 0.0, params.beta};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LossValue v = pose_loss(preds[i], targets[i], params);
    acc.total += v.total;
    acc.translation_term += v.translation_term;
    acc.orientation_term += v.orientation_term;
  }
  const double n = static_cast<double>(preds.size());
  acc.total /= n;
  acc.translation_term /= n;
  acc.orientation_term /= n;
  return acc;
}

/// Batch loss and its gradient with respect to the network's output tensors.
template <typename T>
struct BatchLossGradient {
  LossValue value;
  Tensor<T> grad_q;  // [N,4]
  Tensor<T> grad_t;  // [N,3]
};

template <typename T>
BatchLossGradient<T> batch_pose_loss_grad(const NetworkOutput<T>& out, std::span<const Pose> targets,
                                          const LossParams& params) {
  const std::vector<PosePrediction> preds = to_predictions(out);
  if (preds.empty()) fail(ErrorCode::EmptyBatch, "no samples");
  if (preds.size() != targets.size()) fail(ErrorCode::ShapeMismatch, "prediction and target counts differ");
  const double n = static_cast<double>(preds.size());
  BatchLossGradient<T> res{{0.0, 0.0, 0.0, params.beta}, Tensor<T>({preds.size(), 4}), Tensor<T>({preds.size(), 3})};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto [v, g] = pose_loss_with_grad(preds[i], targets[i], params);
    res.value.total += v.total / n;
    res.value.translation_term += v.translation_term / n;
    res.value.orientation_term += v.orientation_term / n;
    for (int k = 0; k < 4; ++k) res.grad_q.at(i, k) = static_cast<T>(g.q_raw[k] / n);
    for (int k = 0; k < 3; ++k) res.grad_t.at(i, k) = static_cast<T>(g.t[k] / n);
  }
  return res;
}

}  // namespace hgpose
