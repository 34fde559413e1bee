#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpte/geometry.hpp"
#include "fpte/robot_model.hpp"

namespace fpte {

/// Palm pose in the robot frame; the hand is held at theta_p during the reach.
struct PlanTarget {
  Pose pose;
  VecX theta_p;
};

struct TrajectoryDiagnostics {
  double pos_err = 0.0;
  Vec3 rot_err_per_axis = Vec3::Zero();
  double max_penetration = 0.0;  // deepest sphere penetration over all waypoints, meters
  int converged_iterations = 0;  // optimizer iterations actually run
  bool converged = false;        // stopped before the iteration budget
  bool invalid_target = false;   // non-finite or malformed target; trajectory holds the start
  double final_cost = 0.0;
};

struct Trajectory {
  std::vector<JointConfig> waypoints;  // waypoints[0] is the start
  std::vector<VecX> velocities;        // arm then hand, finite differences
  JointConfig terminal;
  Pose terminal_palm;
  TrajectoryDiagnostics diagnostics;
};

struct CostWeights {
  double position = 200.0;
  double rotation = 20.0;
  double collision = 1.0e4;
  double smoothness = 0.2;
  double joint_limit = 100.0;
};

struct PlannerConfig {
  int waypoints = 32;
  int iterations = 300;
  double step_size = 1.0;  // initial line-search step
  CostWeights weights;
  double collision_margin = 0.01;  // meters
  double limit_buffer = 0.02;      // barrier starts this far inside a joint limit, radians
  double pos_threshold = 0.005;    // meters
  double rot_threshold = 14.0 * M_PI / 180.0;  // radians, per axis
  int ik_iterations = 100;
  double ik_damping = 0.05;
  int ik_restarts = 2;
  int lbfgs_memory = 8;
  double tolerance = 1e-10;  // relative cost decrease that counts as converged
  double dt = 0.1;           // seconds between waypoints, for velocities
  int jobs = 0;              // worker threads for plan_batch; 0 = hardware

  /// Throws ConfigError on negative weights or non-positive thresholds.
  void validate() const;
  Json to_json() const;
  static PlannerConfig from_json(const Json& j);
};

/// Total trajectory cost for one target and its gradient with respect to the
/// arm waypoints. q is n_a x W with column 0 pinned to the start.
///   C = w_p |p_W - p*|^2 + w_r (3 - tr(R_W^T R*))
///     + w_c sum_t sum_s max(0, margin - (sdf(c_s) - r_s))^2
///     + w_s sum_t |q_{t+1} - q_t|^2 + w_l sum (limit violation past the buffer)^2
/// The rotation term equals 2(1 - cos angle), which is angle^2 near the goal.
class TrajectoryCost {
 public:
  TrajectoryCost(const RobotModel& model, const Scene& scene, const JointConfig& start, const PlanTarget& target,
                 const PlannerConfig& cfg);

  int arm_dof() const { return n_; }
  int waypoints() const { return w_; }

  /// grad (n_a x W, column 0 zero) is written when non-null.
  double evaluate(const MatX& q, MatX* grad) const;

  double goal_cost(const VecX& arm_q) const;
  /// Deepest penetration of any collision sphere into the scene at one configuration.
  double penetration(const VecX& arm_q) const;

 private:
  struct Frames;
  struct BodySphere {
    int link;  // arm link index; n_a means palm-attached
    Vec3 local;
    double radius;
  };
  struct ShapeCache {
    const Shape* shape;
    Mat3 rt;
    Vec3 t;
    double bound;  // radius of a ball around t containing the shape
  };

  void compute_frames(const VecX& arm_q, Frames& f) const;
  double scene_sdf(const Vec3& p, double cutoff, const ShapeCache** argmin) const;
  double waypoint_cost(const VecX& arm_q, bool is_terminal, Eigen::Ref<VecX> grad, bool want_grad) const;

  const RobotModel& model_;
  PlannerConfig cfg_;
  int n_;
  int w_;
  VecX start_;
  VecX lower_, upper_;
  Vec3 target_p_;
  Mat3 target_r_;
  std::vector<JointSpec> joints_;
  std::vector<Mat3> offset_r_;
  std::vector<Vec3> offset_t_;
  Mat3 palm_r_;
  Vec3 palm_t_;
  std::vector<BodySphere> spheres_;
  std::vector<Vec3> fixed_spheres_;  // base-link sphere centers in world
  std::vector<double> fixed_radii_;
  std::vector<ShapeCache> shapes_;
};

/// Damped least-squares iterations on the 6-D palm error from start, clamped
/// to limits after every step. Deterministic.
VecX ik_warm_start(const RobotModel& model, const VecX& start_arm, const Pose& target, int iters,
                   double damping = 0.05);

/// Plans every target independently; element i depends only on
/// (model, scene, start, targets[i], cfg, seed). Throws ConfigError for an
/// empty batch and for a start outside the joint limits.
std::vector<Trajectory> plan_batch(const RobotModel& model, const Scene& scene, const JointConfig& start,
                                   const std::vector<PlanTarget>& targets, const PlannerConfig& cfg,
                                   std::uint64_t seed);

Trajectory plan_single(const RobotModel& model, const Scene& scene, const JointConfig& start,
                       const PlanTarget& target, const PlannerConfig& cfg, std::uint64_t seed);

bool passes_thresholds(const Trajectory& traj, const PlannerConfig& cfg);
bool passes_thresholds(double pos_err, const Vec3& rot_err_per_axis, const PlannerConfig& cfg);

/// One JSON object per waypoint per line: index, arm, hand, velocity.
std::string trajectory_to_jsonl(const Trajectory& traj);

Json diagnostics_to_json(const TrajectoryDiagnostics& d);

}  // namespace fpte
