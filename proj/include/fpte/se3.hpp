#pragma once

#include <Eigen/Geometry>

#include "fpte/common.hpp"

namespace fpte {

using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

/// Rigid transform in SE(3): x -> R x + t. The rotation is kept as a unit
/// quaternion; q and -q describe the same pose.
class Pose {
 public:
  Pose() = default;
  Pose(const Quat& rotation, const Vec3& translation);
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  static Pose translation_only(const Vec3& t) { return {Quat::Identity(), t}; }
  static Pose from_axis_angle(const Vec3& axis, double angle, const Vec3& t = Vec3::Zero());

  const Quat& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }

  Vec3 apply(const Vec3& point) const { return rotation_ * point + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;

  bool is_finite() const;

 private:
  Quat rotation_ = Quat::Identity();
  Vec3 translation_ = Vec3::Zero();
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Position error in meters and absolute per-axis rotation error in radians.
/// The rotation part is the intrinsic X-Y-Z Euler decomposition of
/// R_current^T R_target.
struct PoseError {
  double position = 0.0;
  Vec3 rotation_per_axis = Vec3::Zero();
};

PoseError pose_error(const Pose& current, const Pose& target);

/// Intrinsic X-Y-Z Euler angles (a, b, c) with R = Rx(a) Ry(b) Rz(c), b in [-pi/2, pi/2].
Vec3 euler_xyz(const Mat3& rotation);
Mat3 rotation_from_euler_xyz(const Vec3& angles);

/// Rotation vector (axis * angle) of a rotation matrix, angle in [0, pi].
Vec3 rotation_log(const Mat3& rotation);

/// Rotation angle between two poses and translation distance.
double rotation_angle_between(const Pose& a, const Pose& b);

bool approx_equal(const Pose& a, const Pose& b, double tol);

}  // namespace fpte
