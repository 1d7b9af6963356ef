#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hgpose/geometry.hpp"
#include "oracles.hpp"

using namespace hgpose;

namespace {

Quaternion random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return quat_normalize({n(rng), n(rng), n(rng), n(rng)});
}

}  // namespace

TEST(Quaternion, NormalizeScalesToUnitLength) {
  const Quaternion q = quat_normalize({0, 3, 0, 4});
  EXPECT_NEAR(q.x, 0.6, 1e-15);
  EXPECT_NEAR(q.z, 0.8, 1e-15);
  EXPECT_NEAR(q.norm(), 1.0, 1e-15);
}

TEST(Quaternion, NormalizeRejectsZero) {
  try {
    quat_normalize({0, 0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroNorm);
  }
}

TEST(Quaternion, IdentityMatrixGivesIdentityQuaternion) {
  const Quaternion q = rotmat_to_quat(RotationMatrix::Identity());
  EXPECT_EQ(q.w, 1.0);
  EXPECT_EQ(q.x, 0.0);
  EXPECT_EQ(q.y, 0.0);
  EXPECT_EQ(q.z, 0.0);
}

TEST(Quaternion, HalfTurnsKeepPositiveFirstNonzero) {
  RotationMatrix r = RotationMatrix::Identity();
  r(1, 1) = r(2, 2) = -1;  // 180 degrees about x
  const Quaternion q = rotmat_to_quat(r);
  EXPECT_NEAR(q.w, 0.0, 1e-12);
  EXPECT_NEAR(q.x, 1.0, 1e-12);
  r = RotationMatrix::Identity();
  r(0, 0) = r(2, 2) = -1;  // about y
  const Quaternion qy = rotmat_to_quat(r);
  EXPECT_NEAR(qy.y, 1.0, 1e-12);
}

TEST(Quaternion, RoundTripThroughMatrixMatchesEigen) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const Quaternion q = random_quat(rng);
    const RotationMatrix r = quat_to_rotmat(q);
    const Eigen::Matrix3d ref = Eigen::Quaterniond(q.w, q.x, q.y, q.z).toRotationMatrix();
    EXPECT_LT((r - ref).cwiseAbs().maxCoeff(), 1e-12);
    const Quaternion back = rotmat_to_quat(r);
    const Quaternion c = canonical_sign(q);
    EXPECT_NEAR(back.w, c.w, 1e-9);
    EXPECT_NEAR(back.x, c.x, 1e-9);
    EXPECT_NEAR(back.y, c.y, 1e-9);
    EXPECT_NEAR(back.z, c.z, 1e-9);
    EXPECT_GE(back.w, 0.0);
  }
}

TEST(Quaternion, RejectsReflectionsAndSkew) {
  RotationMatrix r = RotationMatrix::Identity();
  r(2, 2) = -1;
  EXPECT_THROW(rotmat_to_quat(r), Error);
  r = RotationMatrix::Identity();
  r(0, 1) = 0.01;
  EXPECT_THROW(rotmat_to_quat(r), Error);
}

TEST(Quaternion, ToMatrixRequiresUnitNorm) {
  try {
    quat_to_rotmat({2, 0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotUnit);
  }
}

TEST(AngularError, TrivialCases) {
  const Quaternion id{1, 0, 0, 0};
  EXPECT_NEAR(angular_error_deg(id, id), 0.0, 1e-6);
  EXPECT_NEAR(angular_error_deg(id, -id), 0.0, 1e-6);
  EXPECT_NEAR(angular_error_deg(id, {std::sqrt(0.5), std::sqrt(0.5), 0, 0}), 90.0, 1e-6);
}

TEST(AngularError, SignInvariantAndMatchesMatrixOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Quaternion a = random_quat(rng), b = random_quat(rng);
    const double e = angular_error_deg(a, b);
    EXPECT_NEAR(e, angular_error_deg(a, -b), 1e-9);
    EXPECT_NEAR(e, angular_error_deg(-a, b), 1e-9);
    EXPECT_NEAR(e, oracle::angle_deg_via_matrix(a.w, a.x, a.y, a.z, b.w, b.x, b.y, b.z), 1e-5);
    EXPECT_NEAR(angular_error_deg(a, a), 0.0, 1e-6);
    EXPECT_NEAR(angular_error_deg(a, -a), 0.0, 1e-6);
  }
}

TEST(AngularError, NormalizesInputs) {
  EXPECT_NEAR(angular_error_deg({2, 0, 0, 0}, {0, 0, 0, 5}), 180.0, 1e-9);
}

TEST(TranslationError, EuclideanDistance) {
  EXPECT_DOUBLE_EQ(translation_error_m({0, 0, 0}, {3, 4, 0}), 5.0);
  EXPECT_DOUBLE_EQ(translation_error_m({1, 1, 1}, {1, 1, 1}), 0.0);
}

TEST(Homogeneous, IdentityAndRoundTrip) {
  const Pose p = homogeneous_to_pose(HomogeneousMatrix::Identity());
  EXPECT_EQ(p.q.w, 1.0);
  EXPECT_EQ(p.t.x, 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Pose in{canonical_sign(random_quat(rng)), {0.1 * i, -0.2, 1.5}};
    const Pose out = homogeneous_to_pose(pose_to_homogeneous(in));
    EXPECT_NEAR(angular_error_deg(in.q, out.q), 0.0, 1e-6);
    EXPECT_NEAR(translation_error_m(in.t, out.t), 0.0, 1e-12);
  }
}

TEST(Homogeneous, RejectsBadBottomRow) {
  HomogeneousMatrix m = HomogeneousMatrix::Identity();
  m(3, 0) = 0.5;
  try {
    homogeneous_to_pose(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedMatrix);
  }
}
