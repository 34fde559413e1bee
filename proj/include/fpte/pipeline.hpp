#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fpte/grasp_models.hpp"
#include "fpte/vector_planner.hpp"

namespace fpte {

enum class Method { fpte, trad };
std::string to_string(Method m);

enum class FailureReason { none, unreachable, collision, insufficient_contacts, no_thumb, no_opposition };
std::string to_string(FailureReason r);
FailureReason failure_reason_from_string(const std::string& s);

struct GraspCheckConfig {
  double contact_tolerance = 0.005;  // meters
  double opposition_dot = -0.3;      // some contact-normal pair must be at least this opposed
  double smash_depth = 0.01;         // allowed object penetration of non-fingertip spheres
  double unreachable_distance = 0.02;  // pos_err beyond which a contact-free grasp counts as unreachable
  int closing_steps = 40;

  Json to_json() const;
  static GraspCheckConfig from_json(const Json& j);
};

struct ContactReport {
  std::vector<FingerContact> fingers;
  int contact_count = 0;
  bool thumb_contact = false;
  bool opposition = false;
  double min_normal_dot = 1.0;   // over contacting pairs; 1 when fewer than two contacts
  double max_smash_depth = 0.0;  // deepest non-fingertip penetration into the object
  bool smash = false;

  Json to_json() const;
};

struct GraspOutcome {
  bool success = false;
  ContactReport report;
};

/// Per-joint cubic with zero endpoint velocity, `steps` samples including
/// both endpoints, which are reproduced exactly. Throws ConfigError for steps < 2.
std::vector<VecX> close_hand(const VecX& theta_p, const VecX& theta_g, int steps);

/// Follows the closing spline with the arm fixed; each finger stops at its
/// first fingertip contact (|sdf| within tolerance). Returns the achieved
/// hand configuration.
VecX execute_closing(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& theta_p,
                     const VecX& theta_g, const GraspCheckConfig& cfg);

/// Quasi-static oracle at a fixed arm and hand configuration: success iff at
/// least two fingertip contacts including the thumb, an opposed normal pair,
/// and no palm or phalanx sphere deeper than smash_depth inside the object.
GraspOutcome adjudicate_grasp(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& hand,
                              const GraspCheckConfig& cfg = {});

/// First violated condition of an outcome, in the order collision,
/// unreachable / insufficient_contacts, no_thumb, no_opposition.
FailureReason classify_failure(const GraspOutcome& outcome, double pos_err, const GraspCheckConfig& cfg);

/// Object-frame grasp -> robot-frame planner target and back.
PlanTarget to_plan_target(const Grasp& grasp, const Pose& object_pose);
Grasp terminal_grasp(const Trajectory& traj, const Pose& object_pose, const VecX& theta_g);

struct CandidateRecord {
  Grasp target;
  bool planned = false;
  TrajectoryDiagnostics diagnostics;
  bool passes = false;
  Grasp terminal;
  double score = -1.0;  // FPTE: terminal-grasp score; TRAD: target score
  int rank = -1;        // TRAD ranking position
};

struct PipelineResult {
  Method method = Method::fpte;
  std::uint64_t seed = 0;
  int chosen_index = -1;
  bool executed = false;
  Trajectory trajectory;
  Grasp terminal_grasp;
  double predicted_success = 0.0;  // evaluator score of the executed terminal grasp
  double decision_score = 0.0;     // score the method ranked the chosen candidate by
  bool actual_success = false;
  bool passes_thresholds = false;
  FailureReason failure = FailureReason::none;
  int planner_attempts = 0;
  ContactReport contacts;
  std::vector<CandidateRecord> candidates;

  Json to_json() const;
};

struct PipelineConfig {
  int k = 32;
  int max_attempts = 3;
  int n_rays = 16384;
  GraspCheckConfig grasp;

  Json to_json() const;
  static PipelineConfig from_json(const Json& j);
};

/// Test instrumentation. `on_rank` receives every batch of grasps whose
/// scores drive a method's decision.
struct PipelineHooks {
  std::function<void(Method, const std::vector<Grasp>&)> on_rank;
};

/// Bent arm configuration with the palm above the table, facing down, for
/// the default robot; zeros for other arms. Hand at the open preshape.
JointConfig default_start_config(const RobotModel& model);

/// Renders and encodes the scene's cloud and generates the K candidates;
/// shared by both methods so paired runs see identical candidates.
struct Proposal {
  PointCloud cloud;
  bps::BpsEncoding encoding;
  std::vector<Grasp> grasps;
};
Proposal propose(const Scene& scene, const Generator& gen, int k, int n_rays, std::uint64_t seed);

PipelineResult run_fpte(const Scene& scene, const RobotModel& model, const JointConfig& start, const Generator& gen,
                        const Evaluator& ev, const PlannerConfig& planner, const PipelineConfig& cfg,
                        std::uint64_t seed, const PipelineHooks* hooks = nullptr);

PipelineResult run_trad(const Scene& scene, const RobotModel& model, const JointConfig& start, const Generator& gen,
                        const Evaluator& ev, const PlannerConfig& planner, const PipelineConfig& cfg,
                        std::uint64_t seed, const PipelineHooks* hooks = nullptr);

}  // namespace fpte
