#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpte/datagen.hpp"

namespace fpte {

// ------------------------------------------------------------------ statistics

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for a binomial proportion (z = 1.96 for 95%).
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.96);

/// Mean of a - b over pairs with a normal-approximation 95% interval.
struct PairedDifference {
  double mean = 0.0;
  double sd = 0.0;
  Interval ci;
  std::size_t n = 0;
};
PairedDifference paired_difference(const std::vector<double>& a, const std::vector<double>& b, double z = 1.96);

/// Probability that a random positive outscores a random negative, ties
/// counted half. Throws ConfigError unless both labels are present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// One row per distinct score, thresholds descending; a sample counts as
/// predicted positive when its score >= threshold.
std::vector<PrPoint> pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);

struct SweepRow {
  double threshold = 0.0;
  std::size_t included = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

/// Fraction of grasps whose position error is <= each threshold and whose
/// every rotation component is <= rot_threshold.
std::vector<SweepRow> threshold_sweep(const std::vector<double>& pos_err, const std::vector<Vec3>& rot_err,
                                      const std::vector<double>& thresholds, double rot_threshold);

/// Dot-decimal CSV with a fixed header.
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string pr_csv(const std::vector<PrPoint>& rows);
std::string curve_csv(const std::vector<CurvePoint>& rows);

// ------------------------------------------------------------------ run configuration

struct RunConfig {
  Json raw;  // resolved document, embedded into every output
  std::uint64_t seed = 1;
  RobotModel robot = RobotModel::default_model();
  WorldConfig world;
  int bps_size = 4096;
  double bps_radius = 0.15;
  std::uint64_t bps_seed = 7;
  PlannerConfig planner;
  PipelineConfig pipeline;
  DatagenConfig datagen;
  GeneratorTrainConfig train_generator;
  EvaluatorTrainConfig train_evaluator;
  double held_out_fraction = 0.2;
  int trials = 200;
  std::uint64_t bench_seed = 1001;
  std::vector<double> sweep_thresholds;
  int jobs = 0;
  std::string dataset_dir;
  std::string generator_path;
  std::string evaluator_path;
  std::string out_dir;

  bps::BasisSet basis() const;

  /// Throws ConfigError naming the offending key.
  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::string& path);
};

/// Applies "section.key=value" overrides (value parsed as JSON, or as a
/// string when it is not valid JSON).
Json apply_overrides(Json doc, const std::vector<std::string>& overrides);

// ------------------------------------------------------------------ benchmark

struct TrialRecord {
  int trial = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t seed = 0;
  bool blocked = false;
  PipelineResult fpte;
  PipelineResult trad;

  Json to_json() const;
};

struct MethodSummary {
  std::size_t trials = 0;
  std::size_t successes = 0;
  std::size_t executed = 0;
  double success_rate = 0.0;
  Interval success_ci;
  double mean_predicted_executed = 0.0;
  double mean_planner_attempts = 0.0;

  Json to_json() const;
};

struct BenchmarkReport {
  std::size_t trials = 0;
  MethodSummary fpte;
  MethodSummary trad;
  PairedDifference success_gap;  // FPTE - TRAD per paired trial
  double predicted_gap = 0.0;    // mean predicted of executed FPTE - executed TRAD
  std::size_t trad_no_trajectory = 0;
  std::size_t blocked_trials = 0;
  std::size_t blocked_trad_no_trajectory = 0;
  std::size_t fpte_executed_all = 0;
  std::size_t fpte_successes_passing = 0;  // successful FPTE grasps inside the default thresholds
  double fpte_success_pass_fraction = 0.0;
  std::vector<std::uint64_t> scene_seeds;
  std::string trials_path;
  Json config;

  Json to_json() const;
};

/// Scene seed of trial i: visible scenes from mix_seed(bench_seed, i + attempt * trials).
std::uint64_t bench_scene_seed(const RunConfig& cfg, int trial);

/// Paired trials: both methods see the same scene and pipeline seed.
std::vector<TrialRecord> run_trials(const RunConfig& cfg, const Generator& gen, const Evaluator& ev);

BenchmarkReport summarize(const std::vector<TrialRecord>& trials, const RunConfig& cfg);

/// Runs the benchmark and writes report.json and trials.jsonl into out_dir.
BenchmarkReport cmd_bench(const RunConfig& cfg, const std::string& out_dir);

/// Reads trials.jsonl and writes sweep.csv for the FPTE trials that succeeded.
std::vector<SweepRow> cmd_threshold_sweep(const std::string& results_path, const std::vector<double>& thresholds,
                                          double rot_threshold, const std::string& csv_path);

struct PrReport {
  std::vector<PrPoint> curve;
  double auc = 0.0;
  std::size_t samples = 0;
  std::size_t positives = 0;
};

/// Scores the held-out scenes of a dataset and writes pr.csv.
PrReport cmd_pr_curve(const std::string& evaluator_path, const std::string& dataset_path, double held_out_fraction,
                      const std::string& csv_path);

/// Scene seeds of a dataset split by is_held_out.
std::vector<std::uint64_t> split_scenes(const Dataset& ds, double held_out_fraction, bool held_out);

/// Evaluator ROC-AUC on the given samples.
double evaluator_auc(const Evaluator& ev, const std::vector<GraspSample>& samples);

struct TrainResult {
  std::vector<CurvePoint> curve;
  double held_out_auc = 0.0;
};

/// datagen / train-gen / train-ev wrappers; each writes its artifact and a
/// JSON sidecar with the resolved config and seeds.
DatagenSummary cmd_datagen(const RunConfig& cfg);
TrainResult cmd_train_generator(const RunConfig& cfg);
TrainResult cmd_train_evaluator(const RunConfig& cfg);

}  // namespace fpte
