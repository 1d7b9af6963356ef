#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "hgpose/loss.hpp"
#include "oracles.hpp"

using namespace hgpose;

namespace {

struct Triple {
  PosePrediction pred;
  Pose target;
  double beta;
};

Triple random_triple(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> b(0.1, 20.0);
  Triple tr;
  tr.pred = {{u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}};
  tr.target = {canonical_sign(quat_normalize({n(rng), n(rng), n(rng), n(rng)})), {u(rng), u(rng), u(rng)}};
  tr.beta = b(rng);
  return tr;
}

double oracle_loss(const Triple& tr) {
  const double qr[4] = {tr.pred.q_raw.w, tr.pred.q_raw.x, tr.pred.q_raw.y, tr.pred.q_raw.z};
  const double th[3] = {tr.pred.t.x, tr.pred.t.y, tr.pred.t.z};
  const double q[4] = {tr.target.q.w, tr.target.q.x, tr.target.q.y, tr.target.q.z};
  const double t[3] = {tr.target.t.x, tr.target.t.y, tr.target.t.z};
  return oracle::pose_loss(qr, th, q, t, tr.beta);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IO;
}

}  // namespace

TEST(PoseLoss, MatchesScalarTranscription) {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Triple tr = random_triple(rng);
    worst = std::max(worst, std::abs(pose_loss(tr.pred, tr.target, {tr.beta}).total - oracle_loss(tr)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(PoseLoss, AffineInBeta) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Triple tr = random_triple(rng);
    const LossValue v = pose_loss(tr.pred, tr.target, {tr.beta});
    const LossValue one = pose_loss(tr.pred, tr.target, {1.0});
    EXPECT_EQ(v.translation_term, one.translation_term);
    EXPECT_EQ(v.orientation_term, one.orientation_term);
    EXPECT_NEAR(v.total, v.translation_term + tr.beta * v.orientation_term, 1e-12);
    EXPECT_EQ(v.beta_used, tr.beta);
  }
}

TEST(PoseLoss, InvariantToPredictedQuaternionScale) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(1e-3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const Triple tr = random_triple(rng);
    PosePrediction scaled = tr.pred;
    const double k = c(rng);
    scaled.q_raw = {k * tr.pred.q_raw.w, k * tr.pred.q_raw.x, k * tr.pred.q_raw.y, k * tr.pred.q_raw.z};
    EXPECT_NEAR(pose_loss(scaled, tr.target, {tr.beta}).total, pose_loss(tr.pred, tr.target, {tr.beta}).total, 1e-9);
  }
}

TEST(PoseLoss, ZeroExactlyAtTarget) {
  const Pose target{quat_normalize({0.3, -0.2, 0.5, 0.1}), {1, 2, 3}};
  const PosePrediction pred{{0.6, -0.4, 1.0, 0.2}, {1, 2, 3}};
  EXPECT_NEAR(pose_loss(pred, target, {5.0}).total, 0.0, 1e-15);
  const PosePrediction off{{0.6, -0.4, 1.0, 0.2}, {1, 2, 3.5}};
  EXPECT_NEAR(pose_loss(off, target, {5.0}).total, 0.5, 1e-15);
}

TEST(PoseLoss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  int checked = 0;
  while (checked < 500) {
    Triple tr = random_triple(rng);
    const LossWithGradient lg = pose_loss_with_grad(tr.pred, tr.target, {tr.beta});
    if (lg.value.translation_term < 1e-3 || lg.value.orientation_term < 1e-3) continue;
    double* fields[7] = {&tr.pred.q_raw.w, &tr.pred.q_raw.x, &tr.pred.q_raw.y, &tr.pred.q_raw.z,
                         &tr.pred.t.x,     &tr.pred.t.y,     &tr.pred.t.z};
    const double analytic[7] = {lg.grad.q_raw[0], lg.grad.q_raw[1], lg.grad.q_raw[2], lg.grad.q_raw[3],
                                lg.grad.t[0],     lg.grad.t[1],     lg.grad.t[2]};
    double diff = 0.0, scale = 1e-12;
    for (int k = 0; k < 7; ++k) {
      const double orig = *fields[k];
      *fields[k] = orig + 1e-6;
      const double up = oracle_loss(tr);
      *fields[k] = orig - 1e-6;
      const double down = oracle_loss(tr);
      *fields[k] = orig;
      const double numeric = (up - down) / 2e-6;
      diff = std::max(diff, std::abs(numeric - analytic[k]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[k])});
    }
    EXPECT_LE(diff / scale, 1e-6);
    ++checked;
  }
}

TEST(PoseLoss, GradientIsZeroAtKinks) {
  const Pose target{{1, 0, 0, 0}, {0, 0, 0}};
  const LossWithGradient lg = pose_loss_with_grad({{2, 0, 0, 0}, {0, 0, 0}}, target, {1.0});
  for (double g : lg.grad.q_raw) EXPECT_EQ(g, 0.0);
  for (double g : lg.grad.t) EXPECT_EQ(g, 0.0);
}

TEST(PoseLoss, Errors) {
  const Pose target{{1, 0, 0, 0}, {0, 0, 0}};
  EXPECT_EQ(code_of([&] { pose_loss({{0, 0, 0, 0}, {1, 1, 1}}, target, {1.0}); }), ErrorCode::ZeroNormPrediction);
  EXPECT_EQ(code_of([&] { pose_loss({{1, 0, 0, 0}, {1, 1, 1}}, {{2, 0, 0, 0}, {0, 0, 0}}, {1.0}); }),
            ErrorCode::NonUnitTarget);
  EXPECT_EQ(code_of([&] { pose_loss({{1, 0, 0, 0}, {1, 1, 1}}, target, {0.0}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { batch_pose_loss({}, {}, {1.0}); }), ErrorCode::EmptyBatch);
  const std::vector<PosePrediction> one{{{1, 0, 0, 0}, {0, 0, 0}}};
  const std::vector<Pose> two(2, target);
  EXPECT_EQ(code_of([&] { batch_pose_loss(one, two, {1.0}); }), ErrorCode::ShapeMismatch);
}

TEST(PoseLoss, BatchIsMeanOfSamples) {
  std::mt19937_64 rng(5);
  std::vector<PosePrediction> preds;
  std::vector<Pose> targets;
  double sum = 0.0;
  for (int i = 0; i < 7; ++i) {
    Triple tr = random_triple(rng);
    tr.beta = 3.0;
    preds.push_back(tr.pred);
    targets.push_back(tr.target);
    sum += oracle_loss(tr);
  }
  EXPECT_NEAR(batch_pose_loss(preds, targets, {3.0}).total, sum / 7.0, 1e-12);

  NetworkOutput<double> out{Tensor<double>({7, 4}), Tensor<double>({7, 3})};
  for (std::size_t i = 0; i < 7; ++i) {
    out.q_raw.at(i, 0) = preds[i].q_raw.w;
    out.q_raw.at(i, 1) = preds[i].q_raw.x;
    out.q_raw.at(i, 2) = preds[i].q_raw.y;
    out.q_raw.at(i, 3) = preds[i].q_raw.z;
    out.t.at(i, 0) = preds[i].t.x;
    out.t.at(i, 1) = preds[i].t.y;
    out.t.at(i, 2) = preds[i].t.z;
  }
  const auto bg = batch_pose_loss_grad(out, std::span<const Pose>(targets), {3.0});
  EXPECT_NEAR(bg.value.total, sum / 7.0, 1e-12);
  const LossWithGradient first = pose_loss_with_grad(preds[0], targets[0], {3.0});
  EXPECT_NEAR(bg.grad_q.at(0, 2), first.grad.q_raw[2] / 7.0, 1e-15);
  EXPECT_NEAR(bg.grad_t.at(0, 1), first.grad.t[1] / 7.0, 1e-15);
}
