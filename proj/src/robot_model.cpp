#include "fpte/robot_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fpte/config.hpp"

namespace fpte {

namespace {

constexpr double kDeg = M_PI / 180.0;

JointSpec joint(const Vec3& axis, const Vec3& offset, double lo_deg, double hi_deg) {
  return {axis, Pose::translation_only(offset), lo_deg * kDeg, hi_deg * kDeg};
}

Pose joint_rotation(const JointSpec& j, double angle) {
  return {Quat(Eigen::AngleAxisd(angle, j.axis)), Vec3::Zero()};
}

std::string link_name(const RobotModel& m, LinkIndex link) {
  if (link == kBaseLink) return "base";
  if (link < m.arm_dof()) return "arm/" + std::to_string(link);
  if (link == m.palm_link()) return "palm";
  const int rel = link - m.arm_dof() - 1;
  const int jpf = std::max(1, m.joints_per_finger());
  return "finger/" + std::to_string(rel / jpf) + "/" + std::to_string(rel % jpf);
}

LinkIndex parse_link(const RobotModel& m, const std::string& name, const std::string& ctx) {
  if (name == "base") return kBaseLink;
  if (name == "palm") return m.palm_link();
  try {
    if (name.rfind("arm/", 0) == 0) {
      const int i = std::stoi(name.substr(4));
      if (i < 0 || i >= m.arm_dof()) throw ConfigError(ctx + ": arm link out of range: " + name);
      return i;
    }
    if (name.rfind("finger/", 0) == 0) {
      const auto rest = name.substr(7);
      const auto slash = rest.find('/');
      if (slash == std::string::npos) throw ConfigError(ctx + ": bad finger link: " + name);
      const int f = std::stoi(rest.substr(0, slash));
      const int j = std::stoi(rest.substr(slash + 1));
      if (f < 0 || f >= m.finger_count() || j < 0 || j >= m.joints_per_finger())
        throw ConfigError(ctx + ": finger link out of range: " + name);
      return m.finger_link(f, j);
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError(ctx + ": bad link name: " + name);
  }
  throw ConfigError(ctx + ": unknown link: " + name);
}

Json config_pose_to_json(const Pose& p) {
  const Vec3 rpy = euler_xyz(p.rotation_matrix()) / kDeg;
  return {{"xyz", vec3_to_json(p.translation())}, {"rpy_deg", vec3_to_json(rpy)}};
}

Json joint_to_json(const JointSpec& j) {
  return {{"axis", vec3_to_json(j.axis)},
          {"offset", config_pose_to_json(j.offset)},
          {"limits_deg", Json::array({j.lower / kDeg, j.upper / kDeg})}};
}

JointSpec joint_from_json(const Json& j, const std::string& ctx) {
  JointSpec spec;
  spec.axis = vec3_from_json(require(j, "axis", ctx), ctx + ".axis");
  if (spec.axis.norm() < 1e-12) throw ConfigError(ctx + ".axis: zero axis");
  spec.axis.normalize();
  spec.offset = j.contains("offset") ? pose_from_json(j.at("offset")) : Pose();
  const auto lim = require(j, "limits_deg", ctx);
  if (!lim.is_array() || lim.size() != 2) throw ConfigError(ctx + ".limits_deg: expected [lo, hi]");
  spec.lower = lim[0].get<double>() * kDeg;
  spec.upper = lim[1].get<double>() * kDeg;
  return spec;
}

}  // namespace

Json pose_to_json(const Pose& p) {
  const Quat& q = p.rotation();
  return {{"t", vec3_to_json(p.translation())}, {"q_wxyz", Json::array({q.w(), q.x(), q.y(), q.z()})}};
}

Pose pose_from_json(const Json& j) {
  const std::string ctx = "pose";
  if (j.contains("q_wxyz")) {
    const auto& q = j.at("q_wxyz");
    if (!q.is_array() || q.size() != 4) throw ConfigError("pose.q_wxyz: expected 4 numbers");
    return {Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()),
            vec3_from_json(require(j, "t", ctx), "pose.t")};
  }
  const Vec3 t = j.contains("xyz") ? vec3_from_json(j.at("xyz"), "pose.xyz") : Vec3::Zero();
  const Vec3 rpy = j.contains("rpy_deg") ? vec3_from_json(j.at("rpy_deg"), "pose.rpy_deg") : Vec3::Zero();
  return {rotation_from_euler_xyz(rpy * kDeg), t};
}

Pose default_home_palm_pose() {
  // Seven 0.25 m links stacked along z plus the 0.10 m palm offset.
  return Pose::translation_only({0.0, 0.0, 7 * 0.25 + 0.10});
}

RobotModel RobotModel::default_model() {
  RobotModel m;
  const Vec3 z = Vec3::UnitZ();
  const Vec3 y = Vec3::UnitY();
  const Vec3 x = Vec3::UnitX();
  for (int i = 0; i < 7; ++i) {
    const bool yaw = (i % 2 == 0);
    m.arm.push_back(joint(yaw ? z : y, {0, 0, 0.25}, yaw ? -170 : -120, yaw ? 170 : 120));
  }
  m.palm_offset = Pose::translation_only({0, 0, 0.10});

  // Palm frame: +z is the approach direction, thumb on -y, fingers on +y.
  // Positive flexion curls a finger toward the palm centre line y = 0.
  auto make_finger = [&](const Pose& base) {
    FingerSpec f;
    f.base = base;
    f.joints.push_back(joint(y, {0, 0, 0.0}, -25, 25));    // abduction
    f.joints.push_back(joint(x, {0, 0, 0.0}, -30, 95));    // proximal flexion
    f.joints.push_back(joint(x, {0, 0, 0.05}, -20, 100));  // middle flexion
    f.joints.push_back(joint(x, {0, 0, 0.05}, -20, 100));  // distal flexion
    f.tip = Pose::translation_only({0, 0, 0.05});
    return f;
  };
  m.fingers.push_back(make_finger(Pose(Quat(Eigen::AngleAxisd(M_PI, z)), Vec3(0.0, -0.03, 0.0))));
  for (double fx : {-0.03, 0.0, 0.03}) m.fingers.push_back(make_finger(Pose::translation_only({fx, 0.03, 0.0})));
  m.thumb_index = 0;

  for (int i = 0; i < 6; ++i) {
    m.spheres.push_back({i, {0, 0, 0.08}, 0.055, false});
    m.spheres.push_back({i, {0, 0, 0.17}, 0.055, false});
  }
  m.spheres.push_back({6, {0, 0, 0.05}, 0.045, false});
  const LinkIndex palm = m.palm_link();
  for (double sx : {-0.025, 0.025})
    for (double sy : {-0.015, 0.015}) m.spheres.push_back({palm, {sx, sy, -0.015}, 0.025, false});
  for (int f = 0; f < 4; ++f) {
    m.spheres.push_back({m.finger_link(f, 1), {0, 0, 0.025}, 0.012, false});
    m.spheres.push_back({m.finger_link(f, 2), {0, 0, 0.025}, 0.012, false});
    m.spheres.push_back({m.finger_link(f, 3), {0, 0, 0.015}, 0.011, false});
    m.spheres.push_back({m.finger_link(f, 3), {0, 0, 0.04}, 0.01, true});
  }
  m.validate();
  return m;
}

VecX default_open_preshape(const RobotModel& model) {
  VecX theta(model.hand_dof());
  const int jpf = model.joints_per_finger();
  for (int f = 0; f < model.finger_count(); ++f) {
    const double pre[4] = {0.0, -0.35, 0.15, 0.10};
    for (int j = 0; j < jpf; ++j) theta[f * jpf + j] = j < 4 ? pre[j] : 0.0;
  }
  return model.clamp_hand(theta);
}

void RobotModel::validate() const {
  if (arm.empty()) throw ConfigError("robot.arm: at least one joint required");
  if (fingers.empty()) throw ConfigError("robot.fingers: at least one finger required");
  const auto jpf = fingers.front().joints.size();
  if (jpf == 0) throw ConfigError("robot.fingers[0].joints: at least one joint required");
  auto check_joint = [](const JointSpec& j, const std::string& ctx) {
    if (!(j.lower < j.upper)) throw ConfigError(ctx + ": joint limits require lo < hi");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw ConfigError(ctx + ": axis must be unit length");
  };
  for (std::size_t i = 0; i < arm.size(); ++i) check_joint(arm[i], "robot.arm[" + std::to_string(i) + "]");
  for (std::size_t f = 0; f < fingers.size(); ++f) {
    if (fingers[f].joints.size() != jpf)
      throw ConfigError("robot.fingers[" + std::to_string(f) + "]: all fingers need the same joint count");
    for (std::size_t j = 0; j < jpf; ++j)
      check_joint(fingers[f].joints[j], "robot.fingers[" + std::to_string(f) + "].joints[" + std::to_string(j) + "]");
  }
  if (thumb_index < 0 || thumb_index >= finger_count()) throw ConfigError("robot.thumb_index: out of range");
  for (std::size_t s = 0; s < spheres.size(); ++s) {
    const auto ctx = "robot.collision_spheres[" + std::to_string(s) + "]";
    if (!(spheres[s].radius > 0.0)) throw ConfigError(ctx + ": radius must be > 0");
    if (spheres[s].link < kBaseLink || spheres[s].link >= link_count()) throw ConfigError(ctx + ": bad link");
  }
}

RobotModel RobotModel::from_json(const Json& j) {
  RobotModel m;
  const auto& arm = require(j, "arm", "robot");
  if (!arm.is_array()) throw ConfigError("robot.arm: expected a list of joints");
  for (std::size_t i = 0; i < arm.size(); ++i)
    m.arm.push_back(joint_from_json(arm[i], "robot.arm[" + std::to_string(i) + "]"));
  m.palm_offset = j.contains("palm_offset") ? pose_from_json(j.at("palm_offset")) : Pose();
  const auto& fingers = require(j, "fingers", "robot");
  if (!fingers.is_array()) throw ConfigError("robot.fingers: expected a list");
  for (std::size_t f = 0; f < fingers.size(); ++f) {
    const auto ctx = "robot.fingers[" + std::to_string(f) + "]";
    FingerSpec spec;
    spec.base = fingers[f].contains("base") ? pose_from_json(fingers[f].at("base")) : Pose();
    const auto& joints = require(fingers[f], "joints", ctx);
    for (std::size_t k = 0; k < joints.size(); ++k)
      spec.joints.push_back(joint_from_json(joints[k], ctx + ".joints[" + std::to_string(k) + "]"));
    spec.tip = fingers[f].contains("tip") ? pose_from_json(fingers[f].at("tip")) : Pose();
    m.fingers.push_back(std::move(spec));
  }
  m.thumb_index = require_as<int>(j, "thumb_index", "robot");
  if (j.contains("collision_spheres")) {
    const auto& spheres = j.at("collision_spheres");
    for (std::size_t s = 0; s < spheres.size(); ++s) {
      const auto ctx = "robot.collision_spheres[" + std::to_string(s) + "]";
      CollisionSphere cs;
      cs.link = parse_link(m, require_as<std::string>(spheres[s], "link", ctx), ctx);
      cs.center = vec3_from_json(require(spheres[s], "center", ctx), ctx + ".center");
      cs.radius = require_as<double>(spheres[s], "radius", ctx);
      cs.fingertip = value_or<bool>(spheres[s], "fingertip", false, ctx);
      m.spheres.push_back(cs);
    }
  }
  m.validate();
  return m;
}

Json RobotModel::to_json() const {
  Json j;
  j["arm"] = Json::array();
  for (const auto& a : arm) j["arm"].push_back(joint_to_json(a));
  j["palm_offset"] = config_pose_to_json(palm_offset);
  j["fingers"] = Json::array();
  for (const auto& f : fingers) {
    Json jf;
    jf["base"] = config_pose_to_json(f.base);
    jf["joints"] = Json::array();
    for (const auto& k : f.joints) jf["joints"].push_back(joint_to_json(k));
    jf["tip"] = config_pose_to_json(f.tip);
    j["fingers"].push_back(jf);
  }
  j["thumb_index"] = thumb_index;
  j["collision_spheres"] = Json::array();
  for (const auto& s : spheres)
    j["collision_spheres"].push_back({{"link", link_name(*this, s.link)},
                                      {"center", vec3_to_json(s.center)},
                                      {"radius", s.radius},
                                      {"fingertip", s.fingertip}});
  return j;
}

RobotModel RobotModel::load(const std::string& path) { return from_json(read_json_file(path)); }

VecX RobotModel::arm_lower() const {
  VecX v(arm_dof());
  for (int i = 0; i < arm_dof(); ++i) v[i] = arm[i].lower;
  return v;
}

VecX RobotModel::arm_upper() const {
  VecX v(arm_dof());
  for (int i = 0; i < arm_dof(); ++i) v[i] = arm[i].upper;
  return v;
}

VecX RobotModel::hand_lower() const {
  VecX v(hand_dof());
  const int jpf = joints_per_finger();
  for (int f = 0; f < finger_count(); ++f)
    for (int j = 0; j < jpf; ++j) v[f * jpf + j] = fingers[f].joints[j].lower;
  return v;
}

VecX RobotModel::hand_upper() const {
  VecX v(hand_dof());
  const int jpf = joints_per_finger();
  for (int f = 0; f < finger_count(); ++f)
    for (int j = 0; j < jpf; ++j) v[f * jpf + j] = fingers[f].joints[j].upper;
  return v;
}

VecX RobotModel::clamp_arm(const VecX& q) const { return q.cwiseMax(arm_lower()).cwiseMin(arm_upper()); }

VecX RobotModel::clamp_hand(const VecX& theta) const {
  return theta.cwiseMax(hand_lower()).cwiseMin(hand_upper());
}

bool RobotModel::within_limits(const JointConfig& q, double tol) const {
  check_dimensions(q);
  const VecX al = arm_lower().array() - tol, au = arm_upper().array() + tol;
  const VecX hl = hand_lower().array() - tol, hu = hand_upper().array() + tol;
  return (q.arm.array() >= al.array()).all() && (q.arm.array() <= au.array()).all() &&
         (q.hand.array() >= hl.array()).all() && (q.hand.array() <= hu.array()).all();
}

void RobotModel::check_dimensions(const JointConfig& q) const {
  if (q.arm.size() != arm_dof() || q.hand.size() != hand_dof()) {
    std::ostringstream ss;
    ss << "joint config has arm=" << q.arm.size() << " hand=" << q.hand.size() << ", model expects arm=" << arm_dof()
       << " hand=" << hand_dof();
    throw DimensionError(ss.str());
  }
}

Pose RobotModel::link_pose(const Kinematics& k, LinkIndex link) const {
  if (link == kBaseLink) return Pose();
  if (link < arm_dof()) return k.arm_links[static_cast<std::size_t>(link)];
  if (link == palm_link()) return k.palm;
  return k.hand_links[static_cast<std::size_t>(link - arm_dof() - 1)];
}

JointConfig zero_config(const RobotModel& model) {
  return {VecX::Zero(model.arm_dof()), VecX::Zero(model.hand_dof())};
}

Pose palm_pose(const RobotModel& model, const VecX& arm_q) {
  if (arm_q.size() != model.arm_dof()) throw DimensionError("arm config size mismatch");
  Pose t;
  for (int i = 0; i < model.arm_dof(); ++i) t = t * model.arm[i].offset * joint_rotation(model.arm[i], arm_q[i]);
  return t * model.palm_offset;
}

std::vector<Pose> fingertips_in_palm(const RobotModel& model, const VecX& hand_q) {
  if (hand_q.size() != model.hand_dof()) throw DimensionError("hand config size mismatch");
  std::vector<Pose> tips;
  const int jpf = model.joints_per_finger();
  for (int f = 0; f < model.finger_count(); ++f) {
    const auto& finger = model.fingers[f];
    Pose t = finger.base;
    for (int j = 0; j < jpf; ++j) t = t * finger.joints[j].offset * joint_rotation(finger.joints[j], hand_q[f * jpf + j]);
    tips.push_back(t * finger.tip);
  }
  return tips;
}

Kinematics forward_kinematics(const RobotModel& model, const JointConfig& q) {
  model.check_dimensions(q);
  Kinematics k;
  k.arm_links.reserve(model.arm.size());
  Pose t;
  for (int i = 0; i < model.arm_dof(); ++i) {
    t = t * model.arm[i].offset * joint_rotation(model.arm[i], q.arm[i]);
    k.arm_links.push_back(t);
  }
  k.palm = t * model.palm_offset;
  const int jpf = model.joints_per_finger();
  k.hand_links.reserve(static_cast<std::size_t>(model.hand_dof()));
  for (int f = 0; f < model.finger_count(); ++f) {
    const auto& finger = model.fingers[f];
    Pose tf = k.palm * finger.base;
    for (int j = 0; j < jpf; ++j) {
      tf = tf * finger.joints[j].offset * joint_rotation(finger.joints[j], q.hand[f * jpf + j]);
      k.hand_links.push_back(tf);
    }
    k.fingertips.push_back(tf * finger.tip);
  }
  return k;
}

ArmAxes arm_axes(const RobotModel& model, const Kinematics& k) {
  ArmAxes ax;
  for (int i = 0; i < model.arm_dof(); ++i) {
    ax.origins.push_back(k.arm_links[i].translation());
    ax.axes.push_back(k.arm_links[i].rotate(model.arm[i].axis));
  }
  return ax;
}

Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const RobotModel& model, const JointConfig& q) {
  const Kinematics k = forward_kinematics(model, q);
  const ArmAxes ax = arm_axes(model, k);
  Eigen::Matrix<double, 6, Eigen::Dynamic> jac(6, model.arm_dof());
  const Vec3 p = k.palm.translation();
  for (int i = 0; i < model.arm_dof(); ++i) {
    jac.block<3, 1>(0, i) = ax.axes[i].cross(p - ax.origins[i]);
    jac.block<3, 1>(3, i) = ax.axes[i];
  }
  return jac;
}

}  // namespace fpte
