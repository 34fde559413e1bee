// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fpte/bench.hpp"

using namespace fpte;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  int id = 0;
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss.precision(prec);
  ss << v;
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void log(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

JointConfig uniform_config(const RobotModel& m, Rng& rng, double shrink) {
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

Quat random_quat(Rng& rng) {
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) v[i] = gaussian(rng);
  v.normalize();
  return Quat(v[0], v[1], v[2], v[3]);
}

bool same_trajectory(const Trajectory& a, const Trajectory& b) {
  if (a.waypoints.size() != b.waypoints.size()) return false;
  for (std::size_t i = 0; i < a.waypoints.size(); ++i)
    if (a.waypoints[i].arm != b.waypoints[i].arm || a.waypoints[i].hand != b.waypoints[i].hand) return false;
  return a.diagnostics.pos_err == b.diagnostics.pos_err && a.diagnostics.final_cost == b.diagnostics.final_cost;
}

Scene cluttered_scene() {
  Scene s;
  s.object = Shape::box(Vec3(0.04, 0.04, 0.08), Pose::translation_only(Vec3(0.6, 0.0, 0.9)));
  s.obstacles.push_back(Shape::box(Vec3(0.5, 0.8, 0.4), Pose::translation_only(Vec3(0.7, 0.0, 0.4))));
  s.obstacles.push_back(Shape::cylinder(0.05, 0.4, Pose::translation_only(Vec3(0.3, 0.3, 1.2))));
  return s;
}

// ------------------------------------------------------------------ criterion 6

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

Check jacobian_check(const RobotModel& m) {
  Rng rng(601);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const JointConfig q = uniform_config(m, rng, 0.9);
    const auto J = jacobian(m, q);
    for (int i = 0; i < m.arm_dof(); ++i) {
      VecX qp = q.arm, qm = q.arm;
      qp[i] += h;
      qm[i] -= h;
      const Pose pp = palm_pose(m, qp), pm = palm_pose(m, qm);
      Eigen::Matrix<double, 6, 1> num;
      num.head<3>() = (pp.translation() - pm.translation()) / (2 * h);
      num.tail<3>() = rotation_log(pp.rotation_matrix() * pm.rotation_matrix().transpose()) / (2 * h);
      const Eigen::Matrix<double, 6, 1> an = J.col(i);
      worst = std::max(worst, (num - an).norm() / std::max(an.norm(), 1e-6));
    }
  }
  return {"jacobian vs central differences", worst < 1e-4, "max rel err " + fmt(worst)};
}

Check cost_gradient_check(const RobotModel& m) {
  Rng rng(602);
  const Scene scene = cluttered_scene();
  const PlannerConfig cfg;
  const int n = m.arm_dof();
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const JointConfig start = uniform_config(m, rng, 0.8);
    const PlanTarget target{palm_pose(m, uniform_config(m, rng, 0.9).arm), default_open_preshape(m)};
    const TrajectoryCost cost(m, scene, start, target, cfg);
    MatX q(n, cost.waypoints());
    q.col(0) = start.arm;
    for (int t = 1; t < cost.waypoints(); ++t) q.col(t) = uniform_config(m, rng, 1.02).arm;
    MatX grad;
    cost.evaluate(q, &grad);
    MatX fd = MatX::Zero(n, cost.waypoints());
    for (int t = 1; t < cost.waypoints(); ++t) {
      for (int i = 0; i < n; ++i) {
        MatX qp = q, qm = q;
        qp(i, t) += h;
        qm(i, t) -= h;
        fd(i, t) = (cost.evaluate(qp, nullptr) - cost.evaluate(qm, nullptr)) / (2 * h);
      }
    }
    worst = std::max(worst, (grad - fd).norm() / std::max({grad.norm(), fd.norm(), 1e-6}));
  }
  return {"planner cost gradient vs central differences", worst < 1e-4, "max rel err " + fmt(worst)};
}

Check bps_check() {
  Rng rng(603);
  const bps::BasisSet b = bps::make_basis(64, 0.15, 5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c;
    for (int i = 0; i < 200; ++i) c.points.emplace_back(gaussian(rng, 0.05), gaussian(rng, 0.05), gaussian(rng, 0.05));
    const bps::BpsEncoding e = bps::encode(b, c);
    for (int i = 0; i < b.size; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& p : c.points) best = std::min(best, (b.points[i] - p).norm());
      mismatches += e.values[i] != best;
    }
  }
  return {"BPS equals brute force on a 64-point basis", mismatches == 0, std::to_string(mismatches) + " mismatches"};
}

Check batch_independence_check(const RobotModel& m) {
  Rng rng(604);
  const Scene scene = cluttered_scene();
  const JointConfig start{VecX::Zero(m.arm_dof()), default_open_preshape(m)};
  std::vector<PlanTarget> targets;
  for (int i = 0; i < 32; ++i) targets.push_back({palm_pose(m, uniform_config(m, rng, 0.9).arm), start.hand});
  PlannerConfig cfg;
  cfg.iterations = 60;
  int differing = 0;
  for (int k : {1, 4, 32}) {
    const std::vector<PlanTarget> sub(targets.begin(), targets.begin() + k);
    const auto batch = plan_batch(m, scene, start, sub, cfg, 77);
    for (int i = 0; i < k; ++i) differing += !same_trajectory(batch[i], plan_single(m, scene, start, sub[i], cfg, 77));
  }
  return {"plan_batch batch independence for K in {1, 4, 32}", differing == 0,
          std::to_string(differing) + " differing elements"};
}

Check fk_identity_check(const RobotModel& m) {
  Rng rng(605);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose a(random_quat(rng), Vec3(gaussian(rng), gaussian(rng), gaussian(rng)));
    const Pose b(random_quat(rng), Vec3(gaussian(rng), gaussian(rng), gaussian(rng)));
    const Pose c(random_quat(rng), Vec3(gaussian(rng), gaussian(rng), gaussian(rng)));
    const PoseError e1 = pose_error(compose(a, inverse(a)), Pose{});
    const PoseError e2 = pose_error(compose(compose(a, b), c), compose(a, compose(b, c)));
    const PoseError e3 = pose_error(compose(a, Pose{}), a);
    worst = std::max({worst, e1.position, e1.rotation_per_axis.cwiseAbs().maxCoeff(), e2.position,
                      e2.rotation_per_axis.cwiseAbs().maxCoeff(), e3.position, e3.rotation_per_axis.cwiseAbs().maxCoeff()});
  }
  const bool identities = worst < 1e-9;
  const PoseError home = pose_error(palm_pose(m, VecX::Zero(m.arm_dof())), Pose(Quat::Identity(), Vec3(0, 0, 1.85)));
  const bool home_ok = home.position < 1e-12 && home.rotation_per_axis.cwiseAbs().maxCoeff() < 1e-12;
  bool fk_consistent = true;
  for (int i = 0; i < 100; ++i) {
    const JointConfig q = uniform_config(m, rng, 0.9);
    fk_consistent &= approx_equal(forward_kinematics(m, q).palm, palm_pose(m, q.arm), 1e-12);
  }
  return {"FK, pose and compose identities", identities && home_ok && fk_consistent,
          "max identity residual " + fmt(worst) + ", home " + (home_ok ? "ok" : "wrong")};
}

Check hard_negative_check() {
  const HardNegativeConfig cfg;
  const double deg = M_PI / 180.0;
  Rng rng(606);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const Perturbation p = draw_perturbation(rng, cfg);
    const bool in_caps = p.translation.cwiseAbs().maxCoeff() <= 0.05 && p.rotation.cwiseAbs().maxCoeff() <= 60.0 * deg;
    const bool above_floor = p.translation.norm() >= 0.015 || p.rotation.cwiseAbs().maxCoeff() >= 15.0 * deg;
    bad += !(in_caps && above_floor);
  }
  return {"hard negatives within +-0.05 m / +-60 deg and above the floor over 1e4 draws", bad == 0,
          std::to_string(bad) + " violations"};
}

Check close_hand_check(const RobotModel& m) {
  Rng rng(607);
  std::size_t bad = 0;
  for (int i = 0; i < 200; ++i) {
    const VecX tp = uniform_config(m, rng, 0.9).hand, tg = uniform_config(m, rng, 0.9).hand;
    const auto path = close_hand(tp, tg, 41);
    bad += path.front() != tp || path.back() != tg;
    bad += (path[20] - 0.5 * (tp + tg)).cwiseAbs().maxCoeff() > 1e-15;
    for (const auto& v : close_hand(tp, tp, 7)) bad += v != tp;
  }
  return {"close_hand endpoint and midpoint identities", bad == 0, std::to_string(bad) + " violations"};
}

Check determinism_check(const fs::path& work) {
  const fs::path dir = work / "determinism";
  const Json doc = {
      {"seed", 11},
      {"bps", {{"size", 64}, {"radius", 0.15}, {"seed", 3}}},
      {"datagen", {{"n_scenes", 4}, {"k", 8}}},
      {"planner", {{"iterations", 60}}},
      {"pipeline", {{"k", 4}, {"n_rays", 2048}}},
      {"train_evaluator", {{"steps", 40}, {"batch_size", 12}, {"hidden", {16}}}},
      {"train_generator", {{"epochs", 3}, {"batch_size", 8}, {"hidden", {16}}, {"components", 2}}},
      {"eval", {{"held_out_fraction", 0.5}}},
      {"bench", {{"trials", 3}, {"seed", 5}}},
      {"paths",
       {{"dataset", (dir / "ds").string()},
        {"generator", (dir / "gen.fpnn").string()},
        {"evaluator", (dir / "ev.fpnn").string()},
        {"out", (dir / "bench").string()}}}};
  const std::vector<fs::path> artifacts = {dir / "ds" / "records.jsonl", dir / "ds" / "meta.json",
                                           dir / "ev.fpnn",               dir / "gen.fpnn",
                                           dir / "bench" / "trials.jsonl", dir / "bench" / "report.json",
                                           dir / "bench" / "sweep.csv"};
  auto run = [&](int jobs) {
    fs::remove_all(dir);
    Json d = doc;
    d["jobs"] = jobs;
    const RunConfig cfg = RunConfig::from_json(d);
    cmd_datagen(cfg);
    cmd_train_evaluator(cfg);
    cmd_train_generator(cfg);
    cmd_bench(cfg, cfg.out_dir);
    std::vector<std::string> hashes;
    for (const auto& a : artifacts) hashes.push_back(git_blob_hash(slurp(a)));
    for (const auto& e : fs::directory_iterator(dir / "ds" / "clouds")) hashes.push_back(git_blob_hash(slurp(e.path())));
    return hashes;
  };
  // jobs is recorded in the embedded config, so both runs use the same value.
  const auto a = run(2);
  const auto b = run(2);
  fs::remove_all(dir);
  return {"two seeded runs give byte-identical datasets, checkpoints and reports", a == b,
          std::to_string(a.size()) + " artifacts compared"};
}

Verdict criterion6(const RobotModel& m, const fs::path& work) {
  const auto t0 = Clock::now();
  std::vector<Check> checks;
  checks.push_back(jacobian_check(m));
  checks.push_back(cost_gradient_check(m));
  checks.push_back(bps_check());
  checks.push_back(batch_independence_check(m));
  checks.push_back(fk_identity_check(m));
  checks.push_back(hard_negative_check());
  checks.push_back(close_hand_check(m));
  checks.push_back(determinism_check(work));
  const double secs = seconds_since(t0);
  bool all = secs < 120.0;
  std::string failed;
  for (const auto& c : checks) {
    log(std::string(c.pass ? "  ok   " : "  FAIL ") + c.name + ": " + c.detail);
    all &= c.pass;
    if (!c.pass) failed += (failed.empty() ? "" : "; ") + c.name;
  }
  return {6, all,
          "numerical suites: " + std::to_string(checks.size()) + " checks in " + fmt(secs, 3) + " s (limit 120 s)" +
              (failed.empty() ? "" : ", failed: " + failed)};
}

// ------------------------------------------------------------------ criterion 7

Verdict criterion7(const RobotModel& m) {
  Scene scene;
  scene.object = Shape::sphere(0.02, Pose::translation_only(Vec3(20, 20, 20)));
  Rng rng(701);
  const JointConfig start{VecX::Zero(m.arm_dof()), default_open_preshape(m)};
  std::vector<PlanTarget> targets;
  for (int i = 0; i < 100; ++i) targets.push_back({palm_pose(m, uniform_config(m, rng, 0.9).arm), start.hand});
  const PlannerConfig cfg;
  const auto trs = plan_batch(m, scene, start, targets, cfg, 7);
  int reached = 0;
  for (const auto& tr : trs)
    reached += tr.diagnostics.pos_err < 0.005 && tr.diagnostics.rot_err_per_axis.cwiseAbs().maxCoeff() < 14.0 * M_PI / 180.0;
  return {7, reached >= 95, "planner reached " + std::to_string(reached) + " / 100 FK targets (need >= 95)"};
}

// ------------------------------------------------------------------ criteria 1-5

struct Artifacts {
  bool reuse = false;
  bool ready(const fs::path& p) const { return reuse && fs::exists(p); }
};

double shuffled_control_auc(const RunConfig& cfg) {
  const Dataset ds = read_dataset(cfg.dataset_dir);
  const bps::BasisSet basis = cfg.basis();
  const auto train_scenes = split_scenes(ds, cfg.held_out_fraction, false);
  const auto held_scenes = split_scenes(ds, cfg.held_out_fraction, true);
  const auto train = shuffle_labels(training_samples(ds, basis, &train_scenes), mix_seed(cfg.seed, 0x5a));
  // Hard negatives carry their own label (perturbed => failure) that shuffling
  // cannot reach, so the control draws only from the shuffled dataset.
  EvaluatorTrainConfig tc = cfg.train_evaluator;
  tc.positive_fraction = 0.5;
  tc.negative_fraction = 0.5;
  const Evaluator control = train_evaluator(train, basis, cfg.robot.hand_dof(), tc);
  return evaluator_auc(control, training_samples(ds, basis, &held_scenes));
}

std::vector<Verdict> benchmark_criteria(const RunConfig& cfg, const Artifacts& art, bool run_bench) {
  std::vector<Verdict> out;
  auto t0 = Clock::now();
  if (!art.ready(fs::path(cfg.dataset_dir) / "meta.json")) {
    log("datagen: " + std::to_string(cfg.datagen.n_scenes) + " scenes x " + std::to_string(cfg.datagen.k));
    cmd_datagen(cfg);
    log("datagen done in " + fmt(seconds_since(t0), 4) + " s");
  }
  const Dataset ds = read_dataset(cfg.dataset_dir);
  const std::size_t attempts = ds.records.size();
  std::size_t positives = 0;
  for (const auto& r : ds.records) positives += r.success;
  log("dataset: " + std::to_string(attempts) + " attempts, " + std::to_string(positives) + " positive");

  t0 = Clock::now();
  double held_auc = 0.0;
  if (art.ready(cfg.evaluator_path)) {
    const Evaluator ev = Evaluator::load(cfg.evaluator_path);
    const auto held = split_scenes(ds, cfg.held_out_fraction, true);
    held_auc = evaluator_auc(ev, training_samples(ds, ev.basis, &held));
  } else {
    held_auc = cmd_train_evaluator(cfg).held_out_auc;
  }
  log("evaluator held-out AUC " + fmt(held_auc) + " (" + fmt(seconds_since(t0), 4) + " s)");
  t0 = Clock::now();
  const double control_auc = shuffled_control_auc(cfg);
  log("label-shuffled control AUC " + fmt(control_auc) + " (" + fmt(seconds_since(t0), 4) + " s)");
  out.push_back({5, attempts >= 20000 && held_auc >= 0.85 && control_auc >= 0.45 && control_auc <= 0.55,
                 "held-out AUC " + fmt(held_auc) + " (need >= 0.85), label-shuffled control AUC " + fmt(control_auc) +
                     " (need 0.45 .. 0.55)" + (attempts >= 20000 ? "" : " [dataset below 20k attempts]")});
  if (!run_bench) return out;

  t0 = Clock::now();
  if (!art.ready(cfg.generator_path)) cmd_train_generator(cfg);
  log("generator ready (" + fmt(seconds_since(t0), 4) + " s)");

  t0 = Clock::now();
  const BenchmarkReport rep = cmd_bench(cfg, cfg.out_dir);
  log("benchmark: " + std::to_string(rep.trials) + " paired trials (" + fmt(seconds_since(t0), 4) + " s)");
  const bool scale_ok = attempts >= 20000 && cfg.pipeline.k == 32 && rep.trials == 200;
  const std::string scale = scale_ok ? "" : " [benchmark below the required scale]";

  const PairedDifference& gap = rep.success_gap;
  out.push_back({1, scale_ok && gap.mean >= 0.05 && gap.ci.lo > 0.0,
                 "FPTE " + fmt(rep.fpte.success_rate) + " vs TRAD " + fmt(rep.trad.success_rate) + ", gap " +
                     fmt(gap.mean) + " (95% CI " + fmt(gap.ci.lo) + " .. " + fmt(gap.ci.hi) +
                     "); need gap >= 0.05 with CI excluding 0" + scale});

  out.push_back({2, scale_ok && std::isfinite(rep.predicted_gap) && rep.predicted_gap >= 0.15,
                 "mean evaluator score of executed grasps FPTE " + fmt(rep.fpte.mean_predicted_executed) + " vs TRAD " +
                     fmt(rep.trad.mean_predicted_executed) + ", gap " + fmt(rep.predicted_gap) + " (need >= 0.15)" +
                     scale});

  const auto rows = cmd_threshold_sweep(rep.trials_path, cfg.sweep_thresholds, cfg.planner.rot_threshold,
                                        (fs::path(cfg.out_dir) / "sweep.csv").string());
  bool monotone = !rows.empty();
  for (std::size_t i = 1; i < rows.size(); ++i) monotone &= rows[i].fraction >= rows[i - 1].fraction;
  const bool has_successes = rep.fpte.successes > 0;
  out.push_back({3, scale_ok && has_successes && rep.fpte_success_pass_fraction < 0.5 && monotone,
                 "successful FPTE grasps inside 0.005 m / 14 deg: " + std::to_string(rep.fpte_successes_passing) + " / " +
                     std::to_string(rep.fpte.successes) + " = " + fmt(rep.fpte_success_pass_fraction) +
                     " (need < 0.5), sweep " + (monotone ? "monotone" : "NOT monotone or empty") + scale});

  const double blocked_rate = rep.blocked_trials == 0
                                  ? 0.0
                                  : static_cast<double>(rep.blocked_trad_no_trajectory) / rep.blocked_trials;
  out.push_back({4, scale_ok && blocked_rate > 0.0 && rep.fpte_executed_all == rep.trials,
                 "TRAD executed=false in " + std::to_string(rep.blocked_trad_no_trajectory) + " / " +
                     std::to_string(rep.blocked_trials) + " blocked trials (need > 0), FPTE executed in " +
                     std::to_string(rep.fpte_executed_all) + " / " + std::to_string(rep.trials) + " trials" + scale});

  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FPTE acceptance suite"};
  std::string config_path = FPTE_DEFAULT_CONFIG;
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  int jobs = -1;
  app.add_option("--config", config_path, "run configuration for criteria 1-5");
  app.add_option("--work", work, "directory for generated artifacts");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 7));
  app.add_flag("--reuse", reuse, "keep an existing dataset and checkpoints in the work directory");
  app.add_option("--jobs", jobs, "worker threads (default: config value)");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);

  std::vector<Verdict> verdicts;
  int status = 0;
  try {
    Json doc = read_json_file(config_path);
    doc["paths"] = {{"dataset", (work_dir / "dataset").string()},
                    {"generator", (work_dir / "generator.fpnn").string()},
                    {"evaluator", (work_dir / "evaluator.fpnn").string()},
                    {"out", (work_dir / "bench").string()}};
    if (jobs >= 0) doc["jobs"] = jobs;
    const RunConfig cfg = RunConfig::from_json(doc);

    if (wanted(6)) verdicts.push_back(criterion6(cfg.robot, work_dir));
    if (wanted(7)) verdicts.push_back(criterion7(cfg.robot));
    const bool bench = wanted(1) || wanted(2) || wanted(3) || wanted(4);
    if (bench || wanted(5)) {
      for (auto& v : benchmark_criteria(cfg, Artifacts{reuse}, bench))
        if (wanted(v.id)) verdicts.push_back(std::move(v));
    }
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
    status = 2;
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  for (const auto& v : verdicts) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << v.id << ": " << v.detail << "\n";
    if (!v.pass && status == 0) status = 1;
  }
  std::cout.flush();
  return status;
}
