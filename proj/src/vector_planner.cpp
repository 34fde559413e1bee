#include "fpte/vector_planner.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace fpte {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double shape_bound(const Shape& s) {
  switch (s.kind) {
    case ShapeKind::box: return s.params.norm();
    case ShapeKind::sphere: return s.params[0];
    case ShapeKind::capsule: return s.params[0] + s.params[1];
    case ShapeKind::cylinder: return std::hypot(s.params[0], s.params[1]);
  }
  return kInf;
}

}  // namespace

// ------------------------------------------------------------------ config

void PlannerConfig::validate() const {
  if (waypoints < 2) throw ConfigError("planner.waypoints: must be >= 2");
  if (iterations < 0) throw ConfigError("planner.iterations: must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("planner.step_size: must be > 0");
  const double w[] = {weights.position, weights.rotation, weights.collision, weights.smoothness, weights.joint_limit};
  for (double v : w)
    if (!(v >= 0.0)) throw ConfigError("planner.weights: all weights must be >= 0");
  if (!(collision_margin >= 0.0)) throw ConfigError("planner.collision_margin: must be >= 0");
  if (!(pos_threshold > 0.0) || !(rot_threshold > 0.0)) throw ConfigError("planner thresholds must be > 0");
  if (ik_iterations < 1) throw ConfigError("planner.ik_iterations: must be >= 1");
  if (lbfgs_memory < 1) throw ConfigError("planner.lbfgs_memory: must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("planner.dt: must be > 0");
}

Json PlannerConfig::to_json() const {
  return Json{{"waypoints", waypoints},
              {"iterations", iterations},
              {"step_size", step_size},
              {"weights",
               {{"position", weights.position},
                {"rotation", weights.rotation},
                {"collision", weights.collision},
                {"smoothness", weights.smoothness},
                {"joint_limit", weights.joint_limit}}},
              {"collision_margin", collision_margin},
              {"limit_buffer", limit_buffer},
              {"pos_threshold", pos_threshold},
              {"rot_threshold_deg", rot_threshold * 180.0 / M_PI},
              {"ik_iterations", ik_iterations},
              {"ik_damping", ik_damping},
              {"ik_restarts", ik_restarts},
              {"lbfgs_memory", lbfgs_memory},
              {"tolerance", tolerance},
              {"dt", dt},
              {"jobs", jobs}};
}

PlannerConfig PlannerConfig::from_json(const Json& j) {
  const std::string ctx = "planner";
  PlannerConfig c;
  c.waypoints = value_or(j, "waypoints", c.waypoints, ctx);
  c.iterations = value_or(j, "iterations", c.iterations, ctx);
  c.step_size = value_or(j, "step_size", c.step_size, ctx);
  if (j.contains("weights")) {
    const Json& w = j.at("weights");
    const std::string wctx = ctx + ".weights";
    c.weights.position = value_or(w, "position", c.weights.position, wctx);
    c.weights.rotation = value_or(w, "rotation", c.weights.rotation, wctx);
    c.weights.collision = value_or(w, "collision", c.weights.collision, wctx);
    c.weights.smoothness = value_or(w, "smoothness", c.weights.smoothness, wctx);
    c.weights.joint_limit = value_or(w, "joint_limit", c.weights.joint_limit, wctx);
  }
  c.collision_margin = value_or(j, "collision_margin", c.collision_margin, ctx);
  c.limit_buffer = value_or(j, "limit_buffer", c.limit_buffer, ctx);
  c.pos_threshold = value_or(j, "pos_threshold", c.pos_threshold, ctx);
  c.rot_threshold = value_or(j, "rot_threshold_deg", c.rot_threshold * 180.0 / M_PI, ctx) * M_PI / 180.0;
  c.ik_iterations = value_or(j, "ik_iterations", c.ik_iterations, ctx);
  c.ik_damping = value_or(j, "ik_damping", c.ik_damping, ctx);
  c.ik_restarts = value_or(j, "ik_restarts", c.ik_restarts, ctx);
  c.lbfgs_memory = value_or(j, "lbfgs_memory", c.lbfgs_memory, ctx);
  c.tolerance = value_or(j, "tolerance", c.tolerance, ctx);
  c.dt = value_or(j, "dt", c.dt, ctx);
  c.jobs = value_or(j, "jobs", c.jobs, ctx);
  c.validate();
  return c;
}

// ------------------------------------------------------------------ cost

struct TrajectoryCost::Frames {
  std::vector<Mat3> r;  // arm link rotations, then the palm at index n
  std::vector<Vec3> p;
  std::vector<Vec3> axis;  // world joint axes
};

TrajectoryCost::TrajectoryCost(const RobotModel& model, const Scene& scene, const JointConfig& start,
                               const PlanTarget& target, const PlannerConfig& cfg)
    : model_(model), cfg_(cfg), n_(model.arm_dof()), w_(cfg.waypoints), start_(start.arm) {
  lower_ = model.arm_lower();
  upper_ = model.arm_upper();
  target_p_ = target.pose.translation();
  target_r_ = target.pose.rotation_matrix();
  joints_ = model.arm;
  for (const auto& j : model.arm) {
    offset_r_.push_back(j.offset.rotation_matrix());
    offset_t_.push_back(j.offset.translation());
  }
  palm_r_ = model.palm_offset.rotation_matrix();
  palm_t_ = model.palm_offset.translation();

  // Hand spheres are rigid in the palm frame while the hand is frozen at theta_p.
  JointConfig hand_only = zero_config(model);
  hand_only.hand = target.theta_p;
  const Kinematics k = forward_kinematics(model, hand_only);
  const Pose palm_inv = k.palm.inverse();
  for (const auto& s : model.spheres) {
    if (s.link == kBaseLink) {
      fixed_spheres_.push_back(s.center);
      fixed_radii_.push_back(s.radius);
    } else if (s.link < n_) {
      spheres_.push_back({s.link, s.center, s.radius});
    } else {
      spheres_.push_back({n_, palm_inv.apply(model.link_pose(k, s.link).apply(s.center)), s.radius});
    }
  }
  auto add_shape = [&](const Shape& s) {
    const Pose inv = s.pose.inverse();
    shapes_.push_back({&s, inv.rotation_matrix(), s.pose.translation(), shape_bound(s)});
  };
  add_shape(scene.object);
  for (const auto& o : scene.obstacles) add_shape(o);
}

void TrajectoryCost::compute_frames(const VecX& q, Frames& f) const {
  f.r.resize(static_cast<std::size_t>(n_ + 1));
  f.p.resize(static_cast<std::size_t>(n_ + 1));
  f.axis.resize(static_cast<std::size_t>(n_));
  Mat3 r = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < n_; ++i) {
    p = p + r * offset_t_[i];
    r = r * offset_r_[i];
    f.axis[i] = r * joints_[i].axis;
    r = r * Eigen::AngleAxisd(q[i], joints_[i].axis).toRotationMatrix();
    f.r[i] = r;
    f.p[i] = p;
  }
  f.p[n_] = p + r * palm_t_;
  f.r[n_] = r * palm_r_;
}

double TrajectoryCost::scene_sdf(const Vec3& c, double cutoff, const ShapeCache** argmin) const {
  double best = cutoff;
  *argmin = nullptr;
  for (const auto& s : shapes_) {
    const Vec3 d = c - s.t;
    if (d.norm() - s.bound >= best) continue;
    const double v = s.shape->local_sdf(s.rt * d);
    if (v < best) {
      best = v;
      *argmin = &s;
    }
  }
  return best;
}

double TrajectoryCost::waypoint_cost(const VecX& q, bool is_terminal, Eigen::Ref<VecX> grad, bool want_grad) const {
  Frames f;
  compute_frames(q, f);
  const auto& wt = cfg_.weights;
  double cost = 0.0;

  if (is_terminal) {
    const Vec3 pp = f.p[n_];
    const Mat3& rc = f.r[n_];
    const Vec3 dp = pp - target_p_;
    cost += wt.position * dp.squaredNorm();
    cost += wt.rotation * (3.0 - (rc.transpose() * target_r_).trace());
    if (want_grad) {
      // d tr(R^T R*) / d q_i = axis_i . sum_k (r_k x r*_k)
      Vec3 rot_sum = Vec3::Zero();
      for (int k = 0; k < 3; ++k) rot_sum += rc.col(k).cross(target_r_.col(k));
      for (int i = 0; i < n_; ++i) {
        const Vec3 lin = f.axis[i].cross(pp - f.p[i]);
        grad[i] += 2.0 * wt.position * dp.dot(lin) - wt.rotation * f.axis[i].dot(rot_sum);
      }
    }
  }

  const double margin = cfg_.collision_margin;
  for (const auto& s : spheres_) {
    const Vec3 c = f.r[s.link] * s.local + f.p[s.link];
    const ShapeCache* hit = nullptr;
    const double d = scene_sdf(c, margin + s.radius, &hit) - s.radius;
    if (!hit) continue;
    const double pen = margin - d;
    cost += wt.collision * pen * pen;
    if (want_grad) {
      const Vec3 local = hit->rt * (c - hit->t);
      const Vec3 normal = hit->rt.transpose() * hit->shape->local_gradient(local);
      const Vec3 g = -2.0 * wt.collision * pen * normal;
      const int last = std::min(s.link, n_ - 1);
      for (int i = 0; i <= last; ++i) grad[i] += g.dot(f.axis[i].cross(c - f.p[i]));
    }
  }

  const double buf = cfg_.limit_buffer;
  for (int i = 0; i < n_; ++i) {
    const double hi = upper_[i] - buf;
    const double lo = lower_[i] + buf;
    if (q[i] > hi) {
      cost += wt.joint_limit * (q[i] - hi) * (q[i] - hi);
      if (want_grad) grad[i] += 2.0 * wt.joint_limit * (q[i] - hi);
    } else if (q[i] < lo) {
      cost += wt.joint_limit * (lo - q[i]) * (lo - q[i]);
      if (want_grad) grad[i] -= 2.0 * wt.joint_limit * (lo - q[i]);
    }
  }
  return cost;
}

double TrajectoryCost::evaluate(const MatX& q, MatX* grad) const {
  if (q.rows() != n_ || q.cols() != w_) throw DimensionError("trajectory cost: waypoint matrix has wrong shape");
  const bool want = grad != nullptr;
  MatX g = MatX::Zero(n_, w_);
  double cost = 0.0;
  for (std::size_t i = 0; i < fixed_spheres_.size(); ++i) {
    const ShapeCache* hit = nullptr;
    const double d = scene_sdf(fixed_spheres_[i], cfg_.collision_margin + fixed_radii_[i], &hit) - fixed_radii_[i];
    if (hit) cost += (w_ - 1) * cfg_.weights.collision * (cfg_.collision_margin - d) * (cfg_.collision_margin - d);
  }
  for (int t = 1; t < w_; ++t) {
    VecX col = q.col(t);
    VecX gcol = VecX::Zero(n_);
    cost += waypoint_cost(col, t == w_ - 1, gcol, want);
    if (want) g.col(t) += gcol;
  }
  const double ws = cfg_.weights.smoothness;
  for (int t = 0; t + 1 < w_; ++t) {
    const VecX d = q.col(t + 1) - q.col(t);
    cost += ws * d.squaredNorm();
    if (want) {
      g.col(t + 1) += 2.0 * ws * d;
      if (t > 0) g.col(t) -= 2.0 * ws * d;
    }
  }
  if (want) *grad = std::move(g);
  return cost;
}

double TrajectoryCost::goal_cost(const VecX& arm_q) const {
  Frames f;
  compute_frames(arm_q, f);
  return cfg_.weights.position * (f.p[n_] - target_p_).squaredNorm() +
         cfg_.weights.rotation * (3.0 - (f.r[n_].transpose() * target_r_).trace());
}

double TrajectoryCost::penetration(const VecX& arm_q) const {
  Frames f;
  compute_frames(arm_q, f);
  double worst = 0.0;
  auto check = [&](const Vec3& c, double r) {
    const ShapeCache* hit = nullptr;
    const double d = scene_sdf(c, r, &hit) - r;
    if (hit) worst = std::max(worst, -d);
  };
  for (std::size_t i = 0; i < fixed_spheres_.size(); ++i) check(fixed_spheres_[i], fixed_radii_[i]);
  for (const auto& s : spheres_) check(f.r[s.link] * s.local + f.p[s.link], s.radius);
  return worst;
}

// ------------------------------------------------------------------ IK

VecX ik_warm_start(const RobotModel& model, const VecX& start_arm, const Pose& target, int iters, double damping) {
  if (iters < 1) throw ConfigError("ik_warm_start: iters must be >= 1");
  if (start_arm.size() != model.arm_dof()) throw DimensionError("ik_warm_start: start has wrong arm dimension");
  VecX q = model.clamp_arm(start_arm);
  JointConfig jc = zero_config(model);
  const Mat3 rt = target.rotation_matrix();
  const double lambda2 = damping * damping;
  for (int it = 0; it < iters; ++it) {
    jc.arm = q;
    const Pose palm = palm_pose(model, q);
    Eigen::Matrix<double, 6, 1> e;
    e.head<3>() = target.translation() - palm.translation();
    e.tail<3>() = rotation_log(rt * palm.rotation_matrix().transpose());
    if (e.norm() < 1e-12) break;
    const auto jac = jacobian(model, jc);
    const Eigen::Matrix<double, 6, 6> jjt =
        jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    VecX dq = jac.transpose() * jjt.ldlt().solve(e);
    const double step = dq.cwiseAbs().maxCoeff();
    if (step > 0.3) dq *= 0.3 / step;
    q = model.clamp_arm(q + dq);
  }
  return q;
}

// ------------------------------------------------------------------ optimizer

namespace {

struct Bounds {
  VecX lower;
  VecX upper;
  VecX project(const VecX& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

// Projected L-BFGS with Armijo backtracking on the projected path.
struct OptimizerResult {
  VecX x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

template <typename F>
OptimizerResult minimize(const F& fn, VecX x, const Bounds& bounds, const PlannerConfig& cfg) {
  x = bounds.project(x);
  VecX g;
  double f = fn(x, &g);
  std::deque<VecX> s_hist, y_hist;
  OptimizerResult res;
  int stall = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    res.iterations = it + 1;
    // Free variables: those not pinned at a bound with the gradient pushing outward.
    VecX free_mask = VecX::Ones(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if ((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)) free_mask[i] = 0.0;
    }
    const VecX gf = g.cwiseProduct(free_mask);
    if (gf.norm() < 1e-12) {
      res.converged = true;
      break;
    }
    VecX d = -gf;
    if (!s_hist.empty()) {
      const std::size_t m = s_hist.size();
      std::vector<double> alpha(m), rho(m);
      VecX qv = gf;
      for (std::size_t k = m; k-- > 0;) {
        rho[k] = 1.0 / y_hist[k].dot(s_hist[k]);
        alpha[k] = rho[k] * s_hist[k].dot(qv);
        qv -= alpha[k] * y_hist[k];
      }
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      VecX r = gamma * qv;
      for (std::size_t k = 0; k < m; ++k) {
        const double beta = rho[k] * y_hist[k].dot(r);
        r += s_hist[k] * (alpha[k] - beta);
      }
      d = -r.cwiseProduct(free_mask);
      if (d.dot(gf) >= 0.0) {
        s_hist.clear();
        y_hist.clear();
        d = -gf;
      }
    }
    double step = s_hist.empty() ? std::min(cfg.step_size, 0.1 / std::max(1e-12, d.cwiseAbs().maxCoeff()))
                                 : cfg.step_size;
    VecX x_new, g_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      x_new = bounds.project(x + step * d);
      f_new = fn(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (s_hist.empty()) {
        res.converged = true;
        break;
      }
      s_hist.clear();
      y_hist.clear();
      continue;
    }
    const VecX s = x_new - x;
    const VecX y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > cfg.lbfgs_memory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    const double decrease = f - f_new;
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    stall = decrease <= cfg.tolerance * std::max(1.0, std::abs(f)) ? stall + 1 : 0;
    if (stall >= 3) {
      res.converged = true;
      break;
    }
  }
  res.x = std::move(x);
  res.f = f;
  return res;
}

Trajectory hold_start(const RobotModel& model, const JointConfig& start, const PlannerConfig& cfg) {
  Trajectory tr;
  tr.waypoints.assign(static_cast<std::size_t>(cfg.waypoints), start);
  tr.velocities.assign(static_cast<std::size_t>(cfg.waypoints), VecX::Zero(model.arm_dof() + model.hand_dof()));
  tr.terminal = start;
  tr.terminal_palm = palm_pose(model, start.arm);
  return tr;
}

}  // namespace

Trajectory plan_single(const RobotModel& model, const Scene& scene, const JointConfig& start,
                       const PlanTarget& target, const PlannerConfig& cfg, std::uint64_t seed) {
  const int n = model.arm_dof();
  const int w = cfg.waypoints;
  if (!target.pose.is_finite() || target.theta_p.size() != model.hand_dof() || !target.theta_p.allFinite()) {
    JointConfig held = start;
    Trajectory tr = hold_start(model, held, cfg);
    tr.diagnostics.invalid_target = true;
    tr.diagnostics.pos_err = kInf;
    tr.diagnostics.rot_err_per_axis = Vec3::Constant(kInf);
    tr.diagnostics.final_cost = kInf;
    return tr;
  }
  JointConfig start_cfg = start;
  start_cfg.hand = model.clamp_hand(target.theta_p);
  PlanTarget tgt = target;
  tgt.theta_p = start_cfg.hand;

  // Warm start: IK from the start configuration, with seeded restarts when it stalls.
  VecX goal = ik_warm_start(model, start.arm, target.pose, cfg.ik_iterations, cfg.ik_damping);
  auto ik_error = [&](const VecX& q) {
    const Pose p = palm_pose(model, q);
    return (p.translation() - target.pose.translation()).norm() + 0.1 * rotation_angle_between(p, target.pose);
  };
  double best_err = ik_error(goal);
  Rng rng(mix_seed(seed, 0x1c));
  const VecX lo = model.arm_lower();
  const VecX hi = model.arm_upper();
  for (int r = 0; r < cfg.ik_restarts && best_err > 1e-3; ++r) {
    VecX q0(n);
    for (int i = 0; i < n; ++i) q0[i] = start.arm[i] + uniform(rng, -1.0, 1.0) * 0.5 * (hi[i] - lo[i]) * 0.5;
    const VecX cand = ik_warm_start(model, model.clamp_arm(q0), target.pose, cfg.ik_iterations, cfg.ik_damping);
    const double err = ik_error(cand);
    if (err < best_err) {
      best_err = err;
      goal = cand;
    }
  }

  const TrajectoryCost cost(model, scene, start_cfg, tgt, cfg);
  const int nv = n * (w - 1);
  VecX x(nv);
  for (int t = 1; t < w; ++t) {
    const double a = static_cast<double>(t) / (w - 1);
    x.segment((t - 1) * n, n) = (1.0 - a) * start.arm + a * goal;
  }
  Bounds bounds{lo.replicate(w - 1, 1), hi.replicate(w - 1, 1)};
  MatX q(n, w);
  q.col(0) = start.arm;
  auto fn = [&](const VecX& v, VecX* grad) {
    q.rightCols(w - 1) = Eigen::Map<const MatX>(v.data(), n, w - 1);
    MatX gm;
    const double c = cost.evaluate(q, grad ? &gm : nullptr);
    if (grad) *grad = Eigen::Map<const VecX>(gm.rightCols(w - 1).eval().data(), nv);
    return c;
  };
  const OptimizerResult res = minimize(fn, x, bounds, cfg);

  Trajectory tr;
  tr.waypoints.reserve(static_cast<std::size_t>(w));
  tr.waypoints.push_back(start_cfg);
  double worst = cost.penetration(start.arm);
  for (int t = 1; t < w; ++t) {
    JointConfig jc;
    jc.arm = res.x.segment((t - 1) * n, n);
    jc.hand = start_cfg.hand;
    worst = std::max(worst, cost.penetration(jc.arm));
    tr.waypoints.push_back(std::move(jc));
  }
  const int dof = n + model.hand_dof();
  for (int t = 0; t < w; ++t) {
    const int a = std::max(0, t - 1);
    const int b = std::min(w - 1, t + 1);
    VecX v = VecX::Zero(dof);
    v.head(n) = (tr.waypoints[b].arm - tr.waypoints[a].arm) / (cfg.dt * (b - a));
    tr.velocities.push_back(std::move(v));
  }
  tr.terminal = tr.waypoints.back();
  tr.terminal_palm = palm_pose(model, tr.terminal.arm);
  const PoseError err = pose_error(tr.terminal_palm, target.pose);
  tr.diagnostics.pos_err = err.position;
  tr.diagnostics.rot_err_per_axis = err.rotation_per_axis;
  tr.diagnostics.max_penetration = worst;
  tr.diagnostics.converged_iterations = res.iterations;
  tr.diagnostics.converged = res.converged;
  tr.diagnostics.final_cost = res.f;
  return tr;
}

std::vector<Trajectory> plan_batch(const RobotModel& model, const Scene& scene, const JointConfig& start,
                                   const std::vector<PlanTarget>& targets, const PlannerConfig& cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  if (targets.empty()) throw ConfigError("plan_batch: empty target batch (K = 0)");
  model.check_dimensions(start);
  if (!model.within_limits(start, 1e-12)) throw ConfigError("plan_batch: start configuration outside joint limits");
  std::vector<Trajectory> out(targets.size());
  parallel_for(
      targets.size(), [&](std::size_t i) { out[i] = plan_single(model, scene, start, targets[i], cfg, seed); },
      cfg.jobs);
  return out;
}

bool passes_thresholds(double pos_err, const Vec3& rot, const PlannerConfig& cfg) {
  return pos_err <= cfg.pos_threshold && rot.allFinite() && rot.cwiseAbs().maxCoeff() <= cfg.rot_threshold;
}

bool passes_thresholds(const Trajectory& traj, const PlannerConfig& cfg) {
  return !traj.diagnostics.invalid_target &&
         passes_thresholds(traj.diagnostics.pos_err, traj.diagnostics.rot_err_per_axis, cfg);
}

std::string trajectory_to_jsonl(const Trajectory& traj) {
  std::string out;
  for (std::size_t i = 0; i < traj.waypoints.size(); ++i) {
    Json line = {{"index", i},
                 {"arm", vecx_to_json(traj.waypoints[i].arm)},
                 {"hand", vecx_to_json(traj.waypoints[i].hand)},
                 {"velocity", vecx_to_json(traj.velocities[i])}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

Json diagnostics_to_json(const TrajectoryDiagnostics& d) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"pos_err", num(d.pos_err)},
              {"rot_err_per_axis",
               {num(d.rot_err_per_axis[0]), num(d.rot_err_per_axis[1]), num(d.rot_err_per_axis[2])}},
              {"max_penetration", d.max_penetration},
              {"converged_iterations", d.converged_iterations},
              {"converged", d.converged},
              {"invalid_target", d.invalid_target},
              {"final_cost", num(d.final_cost)}};
}

}  // namespace fpte
