#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/LU>

#include "hgpose/error.hpp"

namespace hgpose {

/// Rotation quaternion in (w, x, y, z) order. Network outputs are stored in
/// the same type before normalization, so the norm is not constrained here.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  Quaternion operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
  bool operator==(const Quaternion&) const = default;
};

/// Camera position in meters.
struct Translation {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  Translation operator-(const Translation& o) const { return {x - o.x, y - o.y, z - o.z}; }
  bool operator==(const Translation&) const = default;
};

struct Pose {
  Quaternion q;
  Translation t;
};

using RotationMatrix = Eigen::Matrix3d;
using HomogeneousMatrix = Eigen::Matrix4d;

inline constexpr double kMinQuaternionNorm = 1e-12;

inline Quaternion quat_normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > kMinQuaternionNorm)) fail(ErrorCode::ZeroNorm, "quaternion norm is " + std::to_string(n));
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

/// Hemisphere convention: w >= 0, and when w == 0 the first nonzero of
/// (x, y, z) is positive.
inline Quaternion canonical_sign(const Quaternion& q) {
  if (q.w > 0.0) return q;
  if (q.w < 0.0) return -q;
  for (double c : {q.x, q.y, q.z}) {
    if (c > 0.0) return q;
    if (c < 0.0) return -q;
  }
  return q;
}

inline double orthonormality_error(const RotationMatrix& r) {
  return (r.transpose() * r - RotationMatrix::Identity()).cwiseAbs().maxCoeff();
}

inline Quaternion rotmat_to_quat(const RotationMatrix& r) {
  if (!r.allFinite() || orthonormality_error(r) > 1e-3 || r.determinant() < 0.0)
    fail(ErrorCode::NotARotation, "matrix is not a proper rotation");

  // Shepperd: branch on the largest of (trace, diagonal) to avoid
  // cancellation near 180 degree rotations.
  const double trace = r.trace();
  Quaternion q;
  if (trace >= r(0, 0) && trace >= r(1, 1) && trace >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  return canonical_sign(quat_normalize(q));
}

inline RotationMatrix quat_to_rotmat(const Quaternion& q) {
  if (!(std::abs(q.norm() - 1.0) <= 1e-6)) fail(ErrorCode::NotUnit, "quaternion is not unit norm");
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  RotationMatrix r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Rotation angle between two orientations in degrees, 2 acos(|<q1, q2>|)
/// after normalizing both. Evaluated as 4 atan2(|a - b|, |a + b|) with b
/// on a's hemisphere, which stays accurate near zero where acos does not.
inline double angular_error_deg(const Quaternion& q1, const Quaternion& q2) {
  const Quaternion a = quat_normalize(q1);
  Quaternion b = quat_normalize(q2);
  if (a.dot(b) < 0.0) b = -b;
  const Quaternion diff{a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z};
  const Quaternion sum{a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z};
  return 4.0 * std::atan2(diff.norm(), sum.norm()) * 180.0 / std::numbers::pi;
}

inline double translation_error_m(const Translation& t1, const Translation& t2) { return (t1 - t2).norm(); }

inline Pose homogeneous_to_pose(const HomogeneousMatrix& m) {
  if (!m.allFinite()) fail(ErrorCode::MalformedMatrix, "non-finite entries");
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-4)
    fail(ErrorCode::MalformedMatrix, "bottom row is not (0, 0, 0, 1)");
  const RotationMatrix r = m.block<3, 3>(0, 0);
  if (orthonormality_error(r) > 1e-3 || r.determinant() < 0.0)
    fail(ErrorCode::MalformedMatrix, "rotation block is not orthonormal");
  return {rotmat_to_quat(r), {m(0, 3), m(1, 3), m(2, 3)}};
}

inline HomogeneousMatrix pose_to_homogeneous(const Pose& p) {
  HomogeneousMatrix m = HomogeneousMatrix::Identity();
  m.block<3, 3>(0, 0) = quat_to_rotmat(p.q);
  m(0, 3) = p.t.x;
  m(1, 3) = p.t.y;
  m(2, 3) = p.t.z;
  return m;
}

}  // namespace hgpose
