#pragma once

#include <random>

#include "fpte/common.hpp"
#include "fpte/robot_model.hpp"

namespace fpte::test {

inline JointConfig random_config(const RobotModel& m, Rng& rng, double shrink = 0.9) {
  JointConfig q{VecX(m.arm_dof()), VecX(m.hand_dof())};
  const VecX al = m.arm_lower(), au = m.arm_upper(), hl = m.hand_lower(), hu = m.hand_upper();
  for (int i = 0; i < m.arm_dof(); ++i) {
    const double c = 0.5 * (al[i] + au[i]), h = 0.5 * shrink * (au[i] - al[i]);
    q.arm[i] = uniform(rng, c - h, c + h);
  }
  for (int i = 0; i < m.hand_dof(); ++i) {
    const double c = 0.5 * (hl[i] + hu[i]), h = 0.5 * shrink * (hu[i] - hl[i]);
    q.hand[i] = uniform(rng, c - h, c + h);
  }
  return q;
}

inline Quat random_quat(Rng& rng) {
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) v[i] = gaussian(rng);
  v.normalize();
  return Quat(v[0], v[1], v[2], v[3]);
}

inline Pose random_pose(Rng& rng, double spread = 1.0) {
  return Pose(random_quat(rng), Vec3(gaussian(rng, spread), gaussian(rng, spread), gaussian(rng, spread)));
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace fpte::test
