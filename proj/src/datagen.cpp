#include "fpte/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace fpte {

namespace fs = std::filesystem;

Json HeuristicConfig::to_json() const {
  return Json{{"standoff", standoff},
              {"preshape_jitter", preshape_jitter},
              {"camera_bias", camera_bias},
              {"min_elevation", min_elevation}};
}

HeuristicConfig HeuristicConfig::from_json(const Json& j) {
  const std::string ctx = "heuristic";
  HeuristicConfig c;
  c.standoff = value_or(j, "standoff", c.standoff, ctx);
  c.preshape_jitter = value_or(j, "preshape_jitter", c.preshape_jitter, ctx);
  c.camera_bias = value_or(j, "camera_bias", c.camera_bias, ctx);
  c.min_elevation = value_or(j, "min_elevation", c.min_elevation, ctx);
  if (!(c.standoff >= 0.0)) throw ConfigError(ctx + ".standoff: must be >= 0");
  if (c.camera_bias < 0.0 || c.camera_bias >= 1.0) throw ConfigError(ctx + ".camera_bias: must be in [0, 1)");
  if (c.min_elevation >= 1.0) throw ConfigError(ctx + ".min_elevation: must be < 1");
  return c;
}

std::vector<HeuristicTarget> heuristic_targets(const Scene& scene, const RobotModel& model, int k,
                                               std::uint64_t seed, const HeuristicConfig& cfg) {
  if (k < 1) throw ConfigError("heuristic_targets: K must be >= 1");
  Rng rng(mix_seed(seed, 0x4e));
  const Shape& obj = scene.object;
  const Vec3 center = obj.pose.translation();
  const double reach = obj.extents().norm() + 1e-3;
  const Vec3 to_camera = (scene.camera.pose.translation() - center).normalized();
  const Pose world_to_object = scene.object_pose().inverse();
  const VecX preshape = default_open_preshape(model);

  std::vector<HeuristicTarget> out;
  out.reserve(static_cast<std::size_t>(k));
  while (static_cast<int>(out.size()) < k) {
    Vec3 u(gaussian(rng), gaussian(rng), gaussian(rng));
    if (!(u.norm() > 1e-9)) continue;
    u.normalize();
    if (u.z() < cfg.min_elevation) continue;
    if (u.dot(to_camera) < 0.0 && uniform(rng, 0.0, 1.0) < cfg.camera_bias) continue;
    // Convex object: the surface crosses the ray from the centre exactly once.
    double lo = 0.0, hi = reach;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (obj.sdf(center + mid * u) < 0.0 ? lo : hi) = mid;
    }
    const Vec3 surface = center + 0.5 * (lo + hi) * u;
    const Vec3 normal = obj.gradient(surface).normalized();
    const Vec3 z = -normal;
    const Vec3 helper = std::abs(z.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 x0 = helper.cross(z).normalized();
    const double roll = uniform(rng, -M_PI, M_PI);
    const Vec3 x = std::cos(roll) * x0 + std::sin(roll) * z.cross(x0);
    Mat3 r;
    r.col(0) = x;
    r.col(1) = z.cross(x);
    r.col(2) = z;
    const Pose palm_world(r, surface + cfg.standoff * normal);
    VecX theta = preshape;
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += uniform(rng, -cfg.preshape_jitter, cfg.preshape_jitter);
    out.push_back({compose(world_to_object, palm_world), model.clamp_hand(theta)});
  }
  return out;
}

VecX plan_contact_config(const Scene& scene, const RobotModel& model, const VecX& arm, const VecX& theta_p,
                         double tol) {
  if (theta_p.size() != model.hand_dof()) throw DimensionError("plan_contact_config: theta_p has wrong size");
  const int jpf = model.joints_per_finger();
  const VecX lower = model.hand_lower();
  const VecX upper = model.hand_upper();
  VecX theta = model.clamp_hand(theta_p);
  JointConfig q{arm, theta};
  for (int f = 0; f < model.finger_count(); ++f) {
    for (int it = 0; it < 200; ++it) {
      q.hand = theta;
      const Kinematics k = forward_kinematics(model, q);
      const Vec3 tip = k.fingertips[static_cast<std::size_t>(f)].translation();
      const double r = scene.object.sdf(tip);
      if (std::abs(r) <= tol || !std::isfinite(r)) break;
      const Vec3 g = scene.object.gradient(tip);
      VecX jac(jpf);
      for (int j = 0; j < jpf; ++j) {
        const Pose& link = k.hand_links[static_cast<std::size_t>(f * jpf + j)];
        const Vec3 axis = link.rotate(model.fingers[f].joints[j].axis);
        jac[j] = g.dot(axis.cross(tip - link.translation()));
      }
      // Joints pinned at a limit and pushed outward do not count toward the step.
      for (int j = 0; j < jpf; ++j) {
        const int idx = f * jpf + j;
        const double dir = -r * jac[j];
        if ((theta[idx] >= upper[idx] && dir > 0.0) || (theta[idx] <= lower[idx] && dir < 0.0)) jac[j] = 0.0;
      }
      const double jj = jac.squaredNorm();
      if (jj < 1e-14) break;
      VecX step = -r * jac / (jj + 1e-6);
      const double big = step.cwiseAbs().maxCoeff();
      if (big > 0.2) step *= 0.2 / big;
      const VecX before = theta.segment(f * jpf, jpf);
      theta.segment(f * jpf, jpf) =
          (before + step).cwiseMax(lower.segment(f * jpf, jpf)).cwiseMin(upper.segment(f * jpf, jpf));
      if ((theta.segment(f * jpf, jpf) - before).cwiseAbs().maxCoeff() < 1e-10) break;
    }
  }
  return model.clamp_hand(theta);
}

// ------------------------------------------------------------------ records

Json DatasetRecord::to_json() const {
  return Json{{"scene_seed", scene_seed},
              {"grasp_seed", grasp_seed},
              {"grasp_index", grasp_index},
              {"blocked", blocked},
              {"grasp", grasp.to_json()},
              {"target", target.to_json()},
              {"terminal_arm", vecx_to_json(terminal_arm)},
              {"closed_hand", vecx_to_json(closed_hand)},
              {"pos_err", pos_err},
              {"rot_err", vec3_to_json(rot_err)},
              {"label", success ? 1 : 0},
              {"failure_reason", to_string(failure_reason)},
              {"cloud_ref", cloud_ref}};
}

DatasetRecord DatasetRecord::from_json(const Json& j) {
  const std::string ctx = "record";
  DatasetRecord r;
  r.scene_seed = require_as<std::uint64_t>(j, "scene_seed", ctx);
  r.grasp_seed = require_as<std::uint64_t>(j, "grasp_seed", ctx);
  r.grasp_index = require_as<int>(j, "grasp_index", ctx);
  r.blocked = require_as<bool>(j, "blocked", ctx);
  r.grasp = Grasp::from_json(require(j, "grasp", ctx), ctx + ".grasp");
  r.target = Grasp::from_json(require(j, "target", ctx), ctx + ".target");
  r.terminal_arm = vecx_from_json(require(j, "terminal_arm", ctx), ctx + ".terminal_arm");
  r.closed_hand = vecx_from_json(require(j, "closed_hand", ctx), ctx + ".closed_hand");
  r.pos_err = require_as<double>(j, "pos_err", ctx);
  r.rot_err = vec3_from_json(require(j, "rot_err", ctx), ctx + ".rot_err");
  const int label = require_as<int>(j, "label", ctx);
  if (label != 0 && label != 1) throw ConfigError(ctx + ".label: must be 0 or 1");
  r.success = label == 1;
  r.failure_reason = failure_reason_from_string(require_as<std::string>(j, "failure_reason", ctx));
  r.cloud_ref = require_as<std::string>(j, "cloud_ref", ctx);
  return r;
}

Json DatagenConfig::to_json() const {
  return Json{{"n_scenes", n_scenes}, {"k", k},
              {"seed", seed},         {"n_rays", n_rays},
              {"world", world.to_json()}, {"heuristic", heuristic.to_json()},
              {"planner", planner.to_json()}, {"grasp_check", grasp.to_json()}};
}

DatagenConfig DatagenConfig::from_json(const Json& j) {
  const std::string ctx = "datagen";
  DatagenConfig c;
  c.n_scenes = value_or(j, "n_scenes", c.n_scenes, ctx);
  c.k = value_or(j, "k", c.k, ctx);
  c.seed = value_or(j, "seed", c.seed, ctx);
  c.n_rays = value_or(j, "n_rays", c.n_rays, ctx);
  if (j.contains("world")) c.world = WorldConfig::from_json(j.at("world"));
  if (j.contains("heuristic")) c.heuristic = HeuristicConfig::from_json(j.at("heuristic"));
  if (j.contains("planner")) c.planner = PlannerConfig::from_json(j.at("planner"));
  if (j.contains("grasp_check")) c.grasp = GraspCheckConfig::from_json(j.at("grasp_check"));
  c.jobs = value_or(j, "jobs", c.jobs, ctx);
  if (c.n_scenes < 1) throw ConfigError(ctx + ".n_scenes: must be >= 1");
  if (c.k < 1) throw ConfigError(ctx + ".k: must be >= 1");
  if (c.n_rays < 1) throw ConfigError(ctx + ".n_rays: must be >= 1");
  return c;
}

Json DatagenSummary::to_json() const {
  return Json{{"records", records},
              {"positives", positives},
              {"positive_rate", positive_rate},
              {"failure_counts", failure_counts},
              {"content_hash", content_hash},
              {"scene_seeds", scene_seeds}};
}

namespace {

constexpr int kSceneSeedTries = 16;

std::uint64_t candidate_seed(const DatagenConfig& cfg, int index, int attempt) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(index) +
                                static_cast<std::uint64_t>(attempt) * static_cast<std::uint64_t>(cfg.n_scenes));
}

std::uint64_t render_seed(std::uint64_t scene_seed) { return mix_seed(scene_seed, 1); }

}  // namespace

std::vector<std::uint64_t> dataset_scene_seeds(const DatagenConfig& cfg) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.n_scenes));
  parallel_for(
      seeds.size(),
      [&](std::size_t i) {
        for (int a = 0; a < kSceneSeedTries; ++a) {
          const std::uint64_t s = candidate_seed(cfg, static_cast<int>(i), a);
          try {
            render_partial_cloud(make_scene(s, cfg.world), cfg.n_rays, render_seed(s));
            seeds[i] = s;
            return;
          } catch (const PerceptionError&) {
          }
        }
        throw PerceptionError("datagen: no visible scene for index " + std::to_string(i));
      },
      cfg.jobs);
  return seeds;
}

std::vector<DatasetRecord> generate_scene_records(const DatagenConfig& cfg, const RobotModel& model,
                                                  std::uint64_t scene_seed, PointCloud* cloud_out) {
  const Scene scene = make_scene(scene_seed, cfg.world);
  const PointCloud cloud = render_partial_cloud(scene, cfg.n_rays, render_seed(scene_seed));
  if (cloud_out) *cloud_out = cloud;
  const std::uint64_t target_seed = mix_seed(scene_seed, 2);
  const std::vector<HeuristicTarget> targets = heuristic_targets(scene, model, cfg.k, target_seed, cfg.heuristic);
  std::vector<PlanTarget> plan_targets;
  for (const auto& t : targets) plan_targets.push_back({compose(scene.object_pose(), t.pose), t.theta_p});
  PlannerConfig planner = cfg.planner;
  planner.jobs = 1;
  const JointConfig start = default_start_config(model);
  const std::vector<Trajectory> trajs = plan_batch(model, scene, start, plan_targets, planner, mix_seed(scene_seed, 3));
  const bool blocked = scene_is_blocked(scene_seed, cfg.world);

  std::vector<DatasetRecord> out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    DatasetRecord r;
    r.scene_seed = scene_seed;
    r.grasp_seed = target_seed;
    r.grasp_index = static_cast<int>(i);
    r.blocked = blocked;
    const VecX theta_g = plan_contact_config(scene, model, tr.terminal.arm, tr.terminal.hand, cfg.grasp.contact_tolerance);
    r.target = {targets[i].pose, targets[i].theta_p, theta_g};
    r.grasp = terminal_grasp(tr, scene.object_pose(), theta_g);
    r.terminal_arm = tr.terminal.arm;
    r.closed_hand = execute_closing(scene, model, tr.terminal.arm, tr.terminal.hand, theta_g, cfg.grasp);
    r.pos_err = tr.diagnostics.pos_err;
    r.rot_err = tr.diagnostics.rot_err_per_axis;
    const GraspOutcome outcome = adjudicate_grasp(scene, model, r.terminal_arm, r.closed_hand, cfg.grasp);
    r.success = outcome.success;
    r.failure_reason = classify_failure(outcome, r.pos_err, cfg.grasp);
    r.cloud_ref = "clouds/" + std::to_string(scene_seed) + ".xyz";
    out.push_back(std::move(r));
  }
  return out;
}

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

DatagenSummary generate_dataset(const DatagenConfig& cfg, const RobotModel& model, const std::string& out_dir) {
  if (cfg.n_scenes < 1) throw ConfigError("datagen.n_scenes: must be >= 1");
  const std::vector<std::uint64_t> seeds = dataset_scene_seeds(cfg);
  std::vector<std::vector<DatasetRecord>> per_scene(seeds.size());
  std::vector<PointCloud> clouds(seeds.size());
  parallel_for(
      seeds.size(), [&](std::size_t i) { per_scene[i] = generate_scene_records(cfg, model, seeds[i], &clouds[i]); },
      cfg.jobs);

  DatagenSummary summary;
  summary.scene_seeds = seeds;
  std::string records;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::string cloud_path = (fs::path(out_dir) / "clouds" / (std::to_string(seeds[i]) + ".xyz")).string();
    try {
      write_cloud(cloud_path, clouds[i]);
    } catch (const Error& e) {
      throw IoError("datagen: scene_seed " + std::to_string(seeds[i]) + ": " + e.what());
    }
    for (const auto& r : per_scene[i]) {
      records += r.to_json().dump();
      records += '\n';
      ++summary.records;
      summary.positives += r.success;
      ++summary.failure_counts[to_string(r.failure_reason)];
    }
  }
  summary.positive_rate = static_cast<double>(summary.positives) / static_cast<double>(summary.records);
  summary.content_hash = git_blob_hash(records);
  try {
    write_text_file((fs::path(out_dir) / "records.jsonl").string(), records);
    Json meta = {{"format", "fpte-dataset"},
                 {"version", 1},
                 {"config", cfg.to_json()},
                 {"robot", model.to_json()},
                 {"summary", summary.to_json()},
                 {"content_hash", summary.content_hash}};
    write_text_file((fs::path(out_dir) / "meta.json").string(), meta.dump(2) + "\n");
  } catch (const Error& e) {
    throw IoError(std::string("datagen: ") + e.what() + " (scene seeds " + std::to_string(seeds.front()) + ".." +
                  std::to_string(seeds.back()) + ")");
  }
  return summary;
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path records_path = root / "records.jsonl";
  const fs::path meta_path = root / "meta.json";
  if (!fs::exists(records_path)) throw MissingArtifactError("dataset records not found: " + records_path.string());
  if (!fs::exists(meta_path)) throw MissingArtifactError("dataset metadata not found: " + meta_path.string());
  Dataset ds;
  ds.meta = read_json_file(meta_path.string());
  std::istringstream in(read_text_file(records_path.string()));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      ds.records.push_back(DatasetRecord::from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ConfigError(records_path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(records_path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& r : ds.records) {
    if (ds.clouds.count(r.scene_seed)) continue;
    ds.clouds[r.scene_seed] = read_cloud((root / r.cloud_ref).string());
  }
  return ds;
}

bool is_held_out(std::uint64_t scene_seed, double fraction) {
  const double u = static_cast<double>(mix_seed(scene_seed, 0x7e57) >> 11) * 0x1.0p-53;
  return u < fraction;
}

namespace {

std::set<std::uint64_t> scene_filter(const Dataset& ds, const std::vector<std::uint64_t>* scenes) {
  std::set<std::uint64_t> keep;
  if (scenes) {
    keep.insert(scenes->begin(), scenes->end());
  } else {
    for (const auto& [seed, cloud] : ds.clouds) keep.insert(seed);
  }
  return keep;
}

}  // namespace

std::vector<GraspSample> training_samples(const Dataset& ds, const bps::BasisSet& basis,
                                          const std::vector<std::uint64_t>* scenes) {
  const std::set<std::uint64_t> keep = scene_filter(ds, scenes);
  std::vector<std::uint64_t> order(keep.begin(), keep.end());
  std::vector<std::shared_ptr<const bps::BpsEncoding>> encs(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    encs[i] = std::make_shared<const bps::BpsEncoding>(bps::encode_centered(basis, ds.clouds.at(order[i])));
  });
  std::map<std::uint64_t, std::shared_ptr<const bps::BpsEncoding>> by_seed;
  for (std::size_t i = 0; i < order.size(); ++i) by_seed[order[i]] = encs[i];
  std::vector<GraspSample> out;
  for (const auto& r : ds.records) {
    auto it = by_seed.find(r.scene_seed);
    if (it == by_seed.end()) continue;
    out.push_back({r.grasp, it->second, r.success, r.scene_seed});
  }
  return out;
}

std::vector<SceneGrasps> positive_scene_grasps(const Dataset& ds, const std::vector<std::uint64_t>* scenes) {
  const std::set<std::uint64_t> keep = scene_filter(ds, scenes);
  std::map<std::uint64_t, std::size_t> index;
  std::vector<SceneGrasps> out;
  for (const auto& r : ds.records) {
    if (!r.success || !keep.count(r.scene_seed)) continue;
    auto it = index.find(r.scene_seed);
    if (it == index.end()) {
      it = index.emplace(r.scene_seed, out.size()).first;
      out.push_back({r.scene_seed, ds.clouds.at(r.scene_seed), {}});
    }
    out[it->second].grasps.push_back(r.grasp);
  }
  return out;
}

}  // namespace fpte
