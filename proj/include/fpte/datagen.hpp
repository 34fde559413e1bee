#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fpte/pipeline.hpp"

namespace fpte {

struct HeuristicTarget {
  Pose pose;  // T_OH, object frame
  VecX theta_p;
};

struct HeuristicConfig {
  double standoff = 0.10;        // palm distance from the surface along the normal, meters
  double preshape_jitter = 0.1;  // per-joint uniform jitter of the open preshape, radians
  double camera_bias = 0.5;      // probability of rejecting a direction facing away from the camera
  double min_elevation = -0.1;   // lowest world-z component of an approach direction

  Json to_json() const;
  static HeuristicConfig from_json(const Json& j);
};

/// Approach directions over the object's top and sides (biased toward the
/// camera), palm placed `standoff` out along the surface normal with its z
/// axis pointing at the surface and a uniform roll; theta_p is the jittered
/// open preshape. Deterministic per seed. Throws ConfigError for K < 1.
std::vector<HeuristicTarget> heuristic_targets(const Scene& scene, const RobotModel& model, int k,
                                               std::uint64_t seed, const HeuristicConfig& cfg = {});

/// Per-finger damped Gauss-Newton descent of the fingertip SDF toward zero
/// with the arm fixed. A finger stops once |sdf| <= tol, at its joint limits,
/// or at its nearest approach. The result is clamped to the hand limits.
VecX plan_contact_config(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& theta_p,
                         double tol = 0.005);

struct DatasetRecord {
  std::uint64_t scene_seed = 0;
  std::uint64_t grasp_seed = 0;
  int grasp_index = 0;
  bool blocked = false;
  Grasp grasp;   // executed grasp: terminal palm pose, theta_p, planned theta_g
  Grasp target;  // heuristic target the planner aimed at
  VecX terminal_arm;
  VecX closed_hand;
  double pos_err = 0.0;
  Vec3 rot_err = Vec3::Zero();
  bool success = false;
  FailureReason failure_reason = FailureReason::none;
  std::string cloud_ref;

  Json to_json() const;
  static DatasetRecord from_json(const Json& j);
};

struct DatagenConfig {
  int n_scenes = 625;
  int k = 32;
  std::uint64_t seed = 1;
  int n_rays = 16384;
  WorldConfig world;
  HeuristicConfig heuristic;
  PlannerConfig planner;
  GraspCheckConfig grasp;
  int jobs = 0;

  Json to_json() const;
  static DatagenConfig from_json(const Json& j);
};

struct DatagenSummary {
  std::size_t records = 0;
  std::size_t positives = 0;
  double positive_rate = 0.0;
  std::map<std::string, std::size_t> failure_counts;
  std::string content_hash;
  std::vector<std::uint64_t> scene_seeds;

  Json to_json() const;
};

/// Scene seeds used for a run: mix_seed(seed, i), skipping any scene whose
/// object the camera cannot see.
std::vector<std::uint64_t> dataset_scene_seeds(const DatagenConfig& cfg);

/// Writes <out>/records.jsonl, <out>/clouds/<scene_seed>.xyz and
/// <out>/meta.json. Exactly n_scenes * K records, failures included.
DatagenSummary generate_dataset(const DatagenConfig& cfg, const RobotModel& model, const std::string& out_dir);

/// Records of one scene (used by generate_dataset; exposed for replay tests).
std::vector<DatasetRecord> generate_scene_records(const DatagenConfig& cfg, const RobotModel& model,
                                                  std::uint64_t scene_seed, PointCloud* cloud_out = nullptr);

/// SHA-1 over "blob <size>\0<content>", hex encoded (git object id).
std::string git_blob_hash(const std::string& content);

struct Dataset {
  Json meta;
  std::vector<DatasetRecord> records;
  std::map<std::uint64_t, PointCloud> clouds;
};

/// Throws MissingArtifactError when records.jsonl or meta.json is absent.
Dataset read_dataset(const std::string& dir);

/// Scene-level split: a scene belongs to the held-out set iff its hashed
/// seed falls below `fraction`.
bool is_held_out(std::uint64_t scene_seed, double fraction);

/// Evaluator samples (clouds encoded once per scene with `basis`).
std::vector<GraspSample> training_samples(const Dataset& ds, const bps::BasisSet& basis,
                                          const std::vector<std::uint64_t>* scenes = nullptr);

/// Positive grasps grouped by scene, with their clouds.
std::vector<SceneGrasps> positive_scene_grasps(const Dataset& ds, const std::vector<std::uint64_t>* scenes = nullptr);

}  // namespace fpte
