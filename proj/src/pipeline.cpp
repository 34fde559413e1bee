#include "fpte/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpte {

std::string to_string(Method m) { return m == Method::fpte ? "FPTE" : "TRAD"; }

std::string to_string(FailureReason r) {
  switch (r) {
    case FailureReason::none: return "none";
    case FailureReason::unreachable: return "unreachable";
    case FailureReason::collision: return "collision";
    case FailureReason::insufficient_contacts: return "insufficient_contacts";
    case FailureReason::no_thumb: return "no_thumb";
    case FailureReason::no_opposition: return "no_opposition";
  }
  return "none";
}

FailureReason failure_reason_from_string(const std::string& s) {
  for (auto r : {FailureReason::none, FailureReason::unreachable, FailureReason::collision,
                 FailureReason::insufficient_contacts, FailureReason::no_thumb, FailureReason::no_opposition})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown failure reason '" + s + "'");
}

Json GraspCheckConfig::to_json() const {
  return Json{{"contact_tolerance", contact_tolerance},
              {"opposition_dot", opposition_dot},
              {"smash_depth", smash_depth},
              {"unreachable_distance", unreachable_distance},
              {"closing_steps", closing_steps}};
}

GraspCheckConfig GraspCheckConfig::from_json(const Json& j) {
  const std::string ctx = "grasp_check";
  GraspCheckConfig c;
  c.contact_tolerance = value_or(j, "contact_tolerance", c.contact_tolerance, ctx);
  c.opposition_dot = value_or(j, "opposition_dot", c.opposition_dot, ctx);
  c.smash_depth = value_or(j, "smash_depth", c.smash_depth, ctx);
  c.unreachable_distance = value_or(j, "unreachable_distance", c.unreachable_distance, ctx);
  c.closing_steps = value_or(j, "closing_steps", c.closing_steps, ctx);
  if (!(c.contact_tolerance > 0.0)) throw ConfigError(ctx + ".contact_tolerance: must be > 0");
  if (c.closing_steps < 2) throw ConfigError(ctx + ".closing_steps: must be >= 2");
  return c;
}

Json ContactReport::to_json() const {
  Json f = Json::array();
  for (const auto& c : fingers)
    f.push_back({{"in_contact", c.in_contact},
                 {"signed_distance", c.signed_distance},
                 {"normal", vec3_to_json(c.normal)}});
  return Json{{"fingers", f},
              {"contact_count", contact_count},
              {"thumb_contact", thumb_contact},
              {"opposition", opposition},
              {"min_normal_dot", min_normal_dot},
              {"max_smash_depth", max_smash_depth},
              {"smash", smash}};
}

std::vector<VecX> close_hand(const VecX& theta_p, const VecX& theta_g, int steps) {
  if (steps < 2) throw ConfigError("close_hand: steps must be >= 2");
  if (theta_p.size() != theta_g.size()) throw DimensionError("close_hand: theta_p and theta_g sizes differ");
  std::vector<VecX> out;
  out.reserve(static_cast<std::size_t>(steps));
  const VecX delta = theta_g - theta_p;
  for (int i = 0; i < steps; ++i) {
    const double s = static_cast<double>(i) / (steps - 1);
    out.push_back(theta_p + (s * s * (3.0 - 2.0 * s)) * delta);
  }
  out.front() = theta_p;
  out.back() = theta_g;
  return out;
}

VecX execute_closing(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& theta_p,
                     const VecX& theta_g, const GraspCheckConfig& cfg) {
  const std::vector<VecX> path = close_hand(theta_p, theta_g, cfg.closing_steps);
  const Pose palm = palm_pose(model, arm);
  const int jpf = model.joints_per_finger();
  const double tol = cfg.contact_tolerance;
  VecX achieved = theta_g;
  auto tip_sdf = [&](int f, const VecX& hand) {
    return scene.object.sdf(palm.apply(fingertips_in_palm(model, hand)[static_cast<std::size_t>(f)].translation()));
  };
  for (int f = 0; f < model.finger_count(); ++f) {
    double prev_sdf = tip_sdf(f, path.front());
    if (prev_sdf <= tol) {
      achieved.segment(f * jpf, jpf) = path.front().segment(f * jpf, jpf);
      continue;
    }
    for (std::size_t i = 1; i < path.size(); ++i) {
      const double d = tip_sdf(f, path[i]);
      if (d > tol) {
        prev_sdf = d;
        continue;
      }
      // Contact inside (i-1, i]: bisect along the segment until the tip is
      // within tolerance of the surface.
      VecX lo = path[i - 1], hi = path[i];
      VecX stop = hi;
      if (d < -tol) {
        for (int it = 0; it < 50; ++it) {
          const VecX mid = 0.5 * (lo + hi);
          const double dm = tip_sdf(f, mid);
          if (std::abs(dm) <= tol) {
            stop = mid;
            break;
          }
          (dm > tol ? lo : hi) = mid;
          stop = hi;
        }
      }
      achieved.segment(f * jpf, jpf) = stop.segment(f * jpf, jpf);
      break;
    }
  }
  return achieved;
}

GraspOutcome adjudicate_grasp(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& hand,
                              const GraspCheckConfig& cfg) {
  JointConfig q{arm, hand};
  GraspOutcome out;
  ContactReport& r = out.report;
  r.fingers = fingertip_contacts(scene, model, q, cfg.contact_tolerance);
  std::vector<Vec3> normals;
  for (std::size_t f = 0; f < r.fingers.size(); ++f) {
    if (!r.fingers[f].in_contact) continue;
    ++r.contact_count;
    normals.push_back(r.fingers[f].normal);
    if (static_cast<int>(f) == model.thumb_index) r.thumb_contact = true;
  }
  for (std::size_t a = 0; a < normals.size(); ++a)
    for (std::size_t b = a + 1; b < normals.size(); ++b) r.min_normal_dot = std::min(r.min_normal_dot, normals[a].dot(normals[b]));
  r.opposition = r.min_normal_dot <= cfg.opposition_dot;

  const Kinematics k = forward_kinematics(model, q);
  for (const auto& s : model.spheres) {
    if (s.fingertip) continue;
    const Vec3 c = model.link_pose(k, s.link).apply(s.center);
    r.max_smash_depth = std::max(r.max_smash_depth, -(scene.object.sdf(c) - s.radius));
  }
  r.smash = r.max_smash_depth > cfg.smash_depth;
  out.success = r.contact_count >= 2 && r.thumb_contact && r.opposition && !r.smash;
  return out;
}

FailureReason classify_failure(const GraspOutcome& o, double pos_err, const GraspCheckConfig& cfg) {
  if (o.success) return FailureReason::none;
  if (o.report.smash) return FailureReason::collision;
  if (o.report.contact_count < 2)
    return (o.report.contact_count == 0 && pos_err > cfg.unreachable_distance) ? FailureReason::unreachable
                                                                                : FailureReason::insufficient_contacts;
  if (!o.report.thumb_contact) return FailureReason::no_thumb;
  return FailureReason::no_opposition;
}

PlanTarget to_plan_target(const Grasp& grasp, const Pose& object_pose) {
  return {compose(object_pose, grasp.pose), grasp.theta_p};
}

Grasp terminal_grasp(const Trajectory& traj, const Pose& object_pose, const VecX& theta_g) {
  Grasp g;
  g.pose = compose(inverse(object_pose), traj.terminal_palm);
  g.theta_p = traj.terminal.hand;
  g.theta_g = theta_g;
  return g;
}

Json PipelineResult::to_json() const {
  Json cands = Json::array();
  for (const auto& c : candidates) {
    cands.push_back({{"target", c.target.to_json()},
                     {"planned", c.planned},
                     {"diagnostics", c.planned ? diagnostics_to_json(c.diagnostics) : Json(nullptr)},
                     {"passes", c.passes},
                     {"terminal", c.planned ? c.terminal.to_json() : Json(nullptr)},
                     {"score", c.score},
                     {"rank", c.rank}});
  }
  return Json{{"method", to_string(method)},
              {"seed", seed},
              {"chosen_index", chosen_index},
              {"executed", executed},
              {"terminal_arm", executed ? vecx_to_json(trajectory.terminal.arm) : Json(nullptr)},
              {"terminal_grasp", executed ? terminal_grasp.to_json() : Json(nullptr)},
              {"diagnostics", executed ? diagnostics_to_json(trajectory.diagnostics) : Json(nullptr)},
              {"predicted_success", predicted_success},
              {"decision_score", decision_score},
              {"actual_success", actual_success},
              {"passes_thresholds", passes_thresholds},
              {"failure_reason", to_string(failure)},
              {"planner_attempts", planner_attempts},
              {"contacts", executed ? contacts.to_json() : Json(nullptr)},
              {"candidates", cands}};
}

Json PipelineConfig::to_json() const {
  return Json{{"k", k}, {"max_attempts", max_attempts}, {"n_rays", n_rays}, {"grasp_check", grasp.to_json()}};
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  const std::string ctx = "pipeline";
  PipelineConfig c;
  c.k = value_or(j, "k", c.k, ctx);
  c.max_attempts = value_or(j, "max_attempts", c.max_attempts, ctx);
  c.n_rays = value_or(j, "n_rays", c.n_rays, ctx);
  if (j.contains("grasp_check")) c.grasp = GraspCheckConfig::from_json(j.at("grasp_check"));
  if (c.k < 1) throw ConfigError(ctx + ".k: must be >= 1");
  if (c.max_attempts < 1) throw ConfigError(ctx + ".max_attempts: must be >= 1");
  if (c.n_rays < 1) throw ConfigError(ctx + ".n_rays: must be >= 1");
  return c;
}

JointConfig default_start_config(const RobotModel& model) {
  JointConfig q = zero_config(model);
  if (model.arm_dof() == 7) q.arm << 0.0, 0.2, 0.0, 1.5, 0.0, 1.45, 0.0;
  q.arm = model.clamp_arm(q.arm);
  q.hand = default_open_preshape(model);
  return q;
}

Proposal propose(const Scene& scene, const Generator& gen, int k, int n_rays, std::uint64_t seed) {
  if (k < 1) throw ConfigError("pipeline: K must be >= 1");
  Proposal p;
  p.cloud = render_partial_cloud(scene, n_rays, mix_seed(seed, 1));
  p.encoding = bps::encode_centered(gen.basis, p.cloud);
  p.grasps = gen.generate(p.encoding, k, mix_seed(seed, 2));
  return p;
}

namespace {

void execute(PipelineResult& res, const Scene& scene, const RobotModel& model, const Trajectory& traj,
             const Grasp& target, const PlannerConfig& planner, const GraspCheckConfig& gc) {
  res.executed = true;
  res.trajectory = traj;
  res.terminal_grasp = terminal_grasp(traj, scene.object_pose(), target.theta_g);
  res.passes_thresholds = passes_thresholds(traj, planner);
  const VecX closed =
      execute_closing(scene, model, traj.terminal.arm, traj.terminal.hand, model.clamp_hand(target.theta_g), gc);
  const GraspOutcome outcome = adjudicate_grasp(scene, model, traj.terminal.arm, closed, gc);
  res.actual_success = outcome.success;
  res.contacts = outcome.report;
  res.failure = classify_failure(outcome, traj.diagnostics.pos_err, gc);
}

}  // namespace

PipelineResult run_fpte(const Scene& scene, const RobotModel& model, const JointConfig& start, const Generator& gen,
                        const Evaluator& ev, const PlannerConfig& planner, const PipelineConfig& cfg,
                        std::uint64_t seed, const PipelineHooks* hooks) {
  PipelineResult res;
  res.method = Method::fpte;
  res.seed = seed;
  const Proposal prop = propose(scene, gen, cfg.k, cfg.n_rays, seed);
  std::vector<PlanTarget> targets;
  for (const auto& g : prop.grasps) targets.push_back(to_plan_target(g, scene.object_pose()));
  const std::vector<Trajectory> trajs = plan_batch(model, scene, start, targets, planner, mix_seed(seed, 3));
  res.planner_attempts = 1;

  std::vector<Grasp> terminals;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    terminals.push_back(terminal_grasp(trajs[i], scene.object_pose(), prop.grasps[i].theta_g));
  if (hooks && hooks->on_rank) hooks->on_rank(Method::fpte, terminals);
  const std::vector<double> scores = ev.evaluate_batch(prop.encoding, terminals);

  std::size_t best = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    CandidateRecord c;
    c.target = prop.grasps[i];
    c.planned = true;
    c.diagnostics = trajs[i].diagnostics;
    c.passes = passes_thresholds(trajs[i], planner);
    c.terminal = terminals[i];
    c.score = trajs[i].diagnostics.invalid_target ? -1.0 : scores[i];
    res.candidates.push_back(std::move(c));
    if (res.candidates[i].score > res.candidates[best].score) best = i;
  }
  res.chosen_index = static_cast<int>(best);
  execute(res, scene, model, trajs[best], prop.grasps[best], planner, cfg.grasp);
  res.predicted_success = scores[best];
  res.decision_score = scores[best];
  return res;
}

PipelineResult run_trad(const Scene& scene, const RobotModel& model, const JointConfig& start, const Generator& gen,
                        const Evaluator& ev, const PlannerConfig& planner, const PipelineConfig& cfg,
                        std::uint64_t seed, const PipelineHooks* hooks) {
  PipelineResult res;
  res.method = Method::trad;
  res.seed = seed;
  const Proposal prop = propose(scene, gen, cfg.k, cfg.n_rays, seed);
  if (hooks && hooks->on_rank) hooks->on_rank(Method::trad, prop.grasps);
  const std::vector<double> scores = ev.evaluate_batch(prop.encoding, prop.grasps);

  std::vector<std::size_t> order(prop.grasps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < prop.grasps.size(); ++i) {
    CandidateRecord c;
    c.target = prop.grasps[i];
    c.score = scores[i];
    res.candidates.push_back(std::move(c));
  }
  for (std::size_t r = 0; r < order.size(); ++r) res.candidates[order[r]].rank = static_cast<int>(r);

  const int budget = std::min<int>(cfg.max_attempts, static_cast<int>(order.size()));
  for (int attempt = 0; attempt < budget; ++attempt) {
    const std::size_t i = order[static_cast<std::size_t>(attempt)];
    const std::vector<Trajectory> one = plan_batch(model, scene, start, {to_plan_target(prop.grasps[i], scene.object_pose())},
                                                   planner, mix_seed(seed, 3));
    ++res.planner_attempts;
    CandidateRecord& c = res.candidates[i];
    c.planned = true;
    c.diagnostics = one.front().diagnostics;
    c.passes = passes_thresholds(one.front(), planner);
    c.terminal = terminal_grasp(one.front(), scene.object_pose(), prop.grasps[i].theta_g);
    if (!c.passes) continue;
    res.chosen_index = static_cast<int>(i);
    execute(res, scene, model, one.front(), prop.grasps[i], planner, cfg.grasp);
    // Reported on the executed grasp so both methods are scored on what ran.
    res.predicted_success = ev.evaluate(prop.encoding, res.terminal_grasp);
    res.decision_score = scores[i];
    return res;
  }
  res.failure = FailureReason::unreachable;
  return res;
}

}  // namespace fpte
