#include "fpte/se3.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fpte {

namespace {

// Renormalize only when the norm has drifted; an already-unit quaternion keeps
// its exact bits so vector round trips stay bit-exact.
Quat normalized(const Quat& q) {
  const double n2 = q.squaredNorm();
  if (std::abs(n2 - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()) return q;
  if (!(n2 > 0.0) || !std::isfinite(n2)) return q;
  return Quat(q.coeffs() / std::sqrt(n2));
}

}  // namespace

Pose::Pose(const Quat& rotation, const Vec3& translation)
    : rotation_(normalized(rotation)), translation_(translation) {}

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(normalized(Quat(rotation))), translation_(translation) {}

Pose Pose::from_axis_angle(const Vec3& axis, double angle, const Vec3& t) {
  return {Quat(Eigen::AngleAxisd(angle, axis.normalized())), t};
}

Pose Pose::inverse() const {
  const Quat inv = rotation_.conjugate();
  return {inv, -(inv * translation_)};
}

Pose Pose::operator*(const Pose& rhs) const {
  return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
}

bool Pose::is_finite() const {
  return rotation_.coeffs().allFinite() && translation_.allFinite();
}

Pose compose(const Pose& a, const Pose& b) { return a * b; }

Pose inverse(const Pose& p) { return p.inverse(); }

Vec3 euler_xyz(const Mat3& r) {
  // R = Rx(a) Ry(b) Rz(c):
  //   r02 = sin b, r12 = -sin a cos b, r22 = cos a cos b,
  //   r01 = -cos b sin c, r00 = cos b cos c
  const double sb = std::clamp(r(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  double a = 0.0;
  double c = 0.0;
  if (std::abs(sb) < 1.0 - 1e-12) {
    a = std::atan2(-r(1, 2), r(2, 2));
    c = std::atan2(-r(0, 1), r(0, 0));
  } else {
    // Gimbal lock: only a + c (or a - c) is defined; put it all in a.
    a = std::atan2(r(2, 1), r(1, 1));
  }
  return {a, b, c};
}

Mat3 rotation_from_euler_xyz(const Vec3& angles) {
  return (Eigen::AngleAxisd(angles.x(), Vec3::UnitX()) * Eigen::AngleAxisd(angles.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(angles.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

Vec3 rotation_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

PoseError pose_error(const Pose& current, const Pose& target) {
  PoseError err;
  err.position = (target.translation() - current.translation()).norm();
  const Mat3 rel = current.rotation_matrix().transpose() * target.rotation_matrix();
  err.rotation_per_axis = euler_xyz(rel).cwiseAbs();
  return err;
}

double rotation_angle_between(const Pose& a, const Pose& b) {
  const Quat rel = a.rotation().conjugate() * b.rotation();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

bool approx_equal(const Pose& a, const Pose& b, double tol) {
  return (a.translation() - b.translation()).norm() <= tol && rotation_angle_between(a, b) <= tol;
}

}  // namespace fpte
