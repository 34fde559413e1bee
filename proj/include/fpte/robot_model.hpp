#pragma once

#include <string>
#include <vector>

#include "fpte/config.hpp"

#include "fpte/se3.hpp"

namespace fpte {

struct JointSpec {
  Vec3 axis = Vec3::UnitZ();  // unit axis in the joint frame
  Pose offset;                // parent frame -> joint frame, before rotation
  double lower = -M_PI;       // radians
  double upper = M_PI;
};

struct FingerSpec {
  Pose base;                      // palm frame -> finger root
  std::vector<JointSpec> joints;  // J joints, root to tip
  Pose tip;                       // last joint frame -> fingertip frame
};

/// Link identifier: kBaseLink, arm links 0..n_a-1, the palm at n_a, then
/// finger links in finger-major order.
using LinkIndex = int;
inline constexpr LinkIndex kBaseLink = -1;

struct CollisionSphere {
  LinkIndex link = kBaseLink;
  Vec3 center = Vec3::Zero();  // in the link frame
  double radius = 0.01;
  bool fingertip = false;  // excluded from palm-smash checks
};

struct JointConfig {
  VecX arm;
  VecX hand;
};

/// Result of forward kinematics, everything in the robot base frame.
struct Kinematics {
  std::vector<Pose> arm_links;   // frame of arm joint i after its rotation
  Pose palm;                     // the end-effector frame
  std::vector<Pose> hand_links;  // finger-major, J per finger
  std::vector<Pose> fingertips;  // one per finger
};

class RobotModel {
 public:
  std::vector<JointSpec> arm;
  Pose palm_offset;  // last arm link -> palm
  std::vector<FingerSpec> fingers;
  std::vector<CollisionSphere> spheres;
  int thumb_index = 0;

  /// 7-DoF Z/Y alternating arm, 0.25 m links, four-finger hand with three
  /// 0.05 m phalanges per finger; finger 0 is the opposed thumb.
  static RobotModel default_model();

  /// Parses the structured config (angles in degrees). Throws ConfigError.
  static RobotModel from_json(const Json& j);
  Json to_json() const;
  static RobotModel load(const std::string& path);

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  int arm_dof() const { return static_cast<int>(arm.size()); }
  int finger_count() const { return static_cast<int>(fingers.size()); }
  int joints_per_finger() const { return fingers.empty() ? 0 : static_cast<int>(fingers.front().joints.size()); }
  int hand_dof() const { return finger_count() * joints_per_finger(); }

  LinkIndex palm_link() const { return arm_dof(); }
  LinkIndex finger_link(int finger, int joint) const { return arm_dof() + 1 + finger * joints_per_finger() + joint; }
  int link_count() const { return arm_dof() + 1 + hand_dof(); }

  VecX arm_lower() const;
  VecX arm_upper() const;
  VecX hand_lower() const;
  VecX hand_upper() const;

  VecX clamp_arm(const VecX& q) const;
  VecX clamp_hand(const VecX& theta) const;
  bool within_limits(const JointConfig& q, double tol = 0.0) const;

  /// Throws DimensionError on a size mismatch.
  void check_dimensions(const JointConfig& q) const;

  /// Pose of a link given precomputed kinematics.
  Pose link_pose(const Kinematics& k, LinkIndex link) const;
};

/// Palm pose of the default model with all joints at zero.
Pose default_home_palm_pose();

/// Spread, slightly extended pre-grasp hand configuration.
VecX default_open_preshape(const RobotModel& model);

JointConfig zero_config(const RobotModel& model);

Kinematics forward_kinematics(const RobotModel& model, const JointConfig& q);

/// Palm pose only (arm chain + palm offset).
Pose palm_pose(const RobotModel& model, const VecX& arm_q);

/// Fingertip poses in the palm frame for a hand configuration.
std::vector<Pose> fingertips_in_palm(const RobotModel& model, const VecX& hand_q);

/// Geometric Jacobian of the palm frame, rows (linear; angular), base frame.
Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const RobotModel& model, const JointConfig& q);

/// Joint origins and world axes of the arm joints for a configuration.
struct ArmAxes {
  std::vector<Vec3> origins;
  std::vector<Vec3> axes;
};
ArmAxes arm_axes(const RobotModel& model, const Kinematics& k);

Json pose_to_json(const Pose& p);
Pose pose_from_json(const Json& j);

}  // namespace fpte
