#include "fpte/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fpte {

namespace {

double sign_of(double v) { return v < 0.0 ? -1.0 : 1.0; }

Vec3 any_unit() { return Vec3::UnitX(); }

std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> dirs;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    dirs.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  return dirs;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::box: return "box";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::capsule: return "capsule";
    case ShapeKind::cylinder: return "cylinder";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "box") return ShapeKind::box;
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "capsule") return ShapeKind::capsule;
  if (s == "cylinder") return ShapeKind::cylinder;
  throw ConfigError("shape.kind: unknown kind '" + s + "'");
}

Shape Shape::box(const Vec3& half_extents, const Pose& pose) { return {ShapeKind::box, half_extents, pose}; }
Shape Shape::sphere(double radius, const Pose& pose) { return {ShapeKind::sphere, {radius, 0, 0}, pose}; }
Shape Shape::capsule(double radius, double half_length, const Pose& pose) {
  return {ShapeKind::capsule, {radius, half_length, 0}, pose};
}
Shape Shape::cylinder(double radius, double half_height, const Pose& pose) {
  return {ShapeKind::cylinder, {radius, half_height, 0}, pose};
}

double Shape::local_sdf(const Vec3& p) const {
  switch (kind) {
    case ShapeKind::sphere: return p.norm() - params[0];
    case ShapeKind::box: {
      const Vec3 q = p.cwiseAbs() - params;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case ShapeKind::capsule: {
      const Vec3 c(0, 0, std::clamp(p.z(), -params[1], params[1]));
      return (p - c).norm() - params[0];
    }
    case ShapeKind::cylinder: {
      const double dx = std::hypot(p.x(), p.y()) - params[0];
      const double dz = std::abs(p.z()) - params[1];
      return std::min(std::max(dx, dz), 0.0) + std::hypot(std::max(dx, 0.0), std::max(dz, 0.0));
    }
  }
  return 0.0;
}

Vec3 Shape::local_gradient(const Vec3& p) const {
  switch (kind) {
    case ShapeKind::sphere: {
      const double n = p.norm();
      return n > 0.0 ? Vec3(p / n) : any_unit();
    }
    case ShapeKind::box: {
      const Vec3 q = p.cwiseAbs() - params;
      const Vec3 s(sign_of(p.x()), sign_of(p.y()), sign_of(p.z()));
      if ((q.array() > 0.0).any()) {
        const Vec3 v = q.cwiseMax(0.0);
        return s.cwiseProduct(v) / v.norm();
      }
      Eigen::Index k = 0;
      q.maxCoeff(&k);
      Vec3 g = Vec3::Zero();
      g[k] = s[k];
      return g;
    }
    case ShapeKind::capsule: {
      const Vec3 d = p - Vec3(0, 0, std::clamp(p.z(), -params[1], params[1]));
      const double n = d.norm();
      return n > 0.0 ? Vec3(d / n) : any_unit();
    }
    case ShapeKind::cylinder: {
      const double rho = std::hypot(p.x(), p.y());
      const Vec3 u = rho > 0.0 ? Vec3(p.x() / rho, p.y() / rho, 0.0) : any_unit();
      const Vec3 ez(0, 0, sign_of(p.z()));
      const double dx = rho - params[0];
      const double dz = std::abs(p.z()) - params[1];
      if (dx > 0.0 || dz > 0.0) {
        const double vx = std::max(dx, 0.0);
        const double vz = std::max(dz, 0.0);
        const double n = std::hypot(vx, vz);
        return (vx / n) * u + (vz / n) * ez;
      }
      return dx > dz ? u : ez;
    }
  }
  return any_unit();
}

Vec3 Shape::gradient(const Vec3& world_point) const {
  return pose.rotate(local_gradient(pose.inverse().apply(world_point)));
}

Vec3 Shape::extents() const {
  switch (kind) {
    case ShapeKind::sphere: return Vec3::Constant(2.0 * params[0]);
    case ShapeKind::box: return 2.0 * params;
    case ShapeKind::capsule: return {2.0 * params[0], 2.0 * params[0], 2.0 * (params[1] + params[0])};
    case ShapeKind::cylinder: return {2.0 * params[0], 2.0 * params[0], 2.0 * params[1]};
  }
  return Vec3::Zero();
}

void Shape::validate() const {
  const int used = kind == ShapeKind::sphere ? 1 : kind == ShapeKind::box ? 3 : 2;
  for (int i = 0; i < used; ++i)
    if (!(params[i] > 0.0)) throw ConfigError("shape(" + to_string(kind) + "): dimensions must be > 0");
  if (!pose.is_finite()) throw ConfigError("shape(" + to_string(kind) + "): non-finite pose");
}

Json Shape::to_json() const {
  return {{"kind", to_string(kind)}, {"params", vec3_to_json(params)}, {"pose", pose_to_json(pose)}};
}

Shape Shape::from_json(const Json& j, const std::string& context) {
  Shape s;
  s.kind = shape_kind_from_string(require_as<std::string>(j, "kind", context));
  const auto& p = require(j, "params", context);
  if (!p.is_array() || p.empty() || p.size() > 3) throw ConfigError(context + ".params: expected 1-3 numbers");
  s.params = Vec3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) s.params[static_cast<Eigen::Index>(i)] = p[i].get<double>();
  s.pose = j.contains("pose") ? pose_from_json(j.at("pose")) : Pose();
  s.validate();
  return s;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, double fov_deg, int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = Vec3::UnitX();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return {Pose(r, eye), fov_deg, width, height};
}

double Scene::obstacle_sdf(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) d = std::min(d, o.sdf(p));
  return d;
}

double Scene::sdf(const Vec3& p) const { return std::min(object.sdf(p), obstacle_sdf(p)); }

Vec3 Scene::gradient(const Vec3& p) const {
  const Shape* best = &object;
  double d = object.sdf(p);
  for (const auto& o : obstacles) {
    const double od = o.sdf(p);
    if (od < d) {
      d = od;
      best = &o;
    }
  }
  return best->gradient(p);
}

void Scene::validate() const {
  object.validate();
  for (const auto& o : obstacles) o.validate();
  const Vec3 c = object.pose.translation();
  for (const Vec3& dir : fibonacci_directions(400)) {
    Vec3 p = c + dir;  // well outside; one projection step lands on the surface of a convex shape
    p -= object.sdf(p) * object.gradient(p);
    if (obstacle_sdf(p) < -1e-4) throw ConfigError("scene: object penetrates an obstacle");
  }
}

Json Scene::to_json() const {
  Json j;
  j["object"] = object.to_json();
  j["obstacles"] = Json::array();
  for (const auto& o : obstacles) j["obstacles"].push_back(o.to_json());
  j["camera"] = {{"pose", pose_to_json(camera.pose)},
                 {"fov_deg", camera.fov_deg},
                 {"width", camera.width},
                 {"height", camera.height}};
  return j;
}

Scene Scene::from_json(const Json& j) {
  Scene s;
  s.object = Shape::from_json(require(j, "object", "scene"), "scene.object");
  if (j.contains("obstacles")) {
    const auto& obs = j.at("obstacles");
    for (std::size_t i = 0; i < obs.size(); ++i)
      s.obstacles.push_back(Shape::from_json(obs[i], "scene.obstacles[" + std::to_string(i) + "]"));
  }
  const auto& cam = require(j, "camera", "scene");
  if (cam.contains("look_at")) {
    const auto& la = cam.at("look_at");
    s.camera = Camera::look_at(vec3_from_json(require(la, "eye", "scene.camera.look_at"), "eye"),
                               vec3_from_json(require(la, "target", "scene.camera.look_at"), "target"),
                               value_or<double>(cam, "fov_deg", 35.0, "scene.camera"),
                               value_or<int>(cam, "width", 128, "scene.camera"),
                               value_or<int>(cam, "height", 128, "scene.camera"));
  } else {
    s.camera.pose = pose_from_json(require(cam, "pose", "scene.camera"));
    s.camera.fov_deg = value_or<double>(cam, "fov_deg", 35.0, "scene.camera");
    s.camera.width = value_or<int>(cam, "width", 128, "scene.camera");
    s.camera.height = value_or<int>(cam, "height", 128, "scene.camera");
  }
  if (!(s.camera.fov_deg > 0.0 && s.camera.fov_deg < 180.0)) throw ConfigError("scene.camera.fov_deg: out of range");
  if (s.camera.width < 1 || s.camera.height < 1) throw ConfigError("scene.camera: resolution must be positive");
  s.validate();
  return s;
}

Scene Scene::load(const std::string& path) { return from_json(read_json_file(path)); }

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

std::string format_cloud(const PointCloud& cloud) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << std::setprecision(17);
  for (const auto& p : cloud.points) ss << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  return ss.str();
}

void write_cloud(const std::string& path, const PointCloud& cloud) { write_text_file(path, format_cloud(cloud)); }

PointCloud read_cloud(const std::string& path) {
  std::istringstream in(read_text_file(path));
  in.imbue(std::locale::classic());
  PointCloud cloud;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError(path + ":" + std::to_string(lineno) + ": expected 3 floats");
    cloud.points.push_back(p);
  }
  return cloud;
}

PointCloud render_partial_cloud(const Scene& scene, int n_rays, std::uint64_t seed) {
  const Camera& cam = scene.camera;
  int w = cam.width;
  int h = cam.height;
  if (n_rays > 0) {
    const double aspect = static_cast<double>(cam.width) / cam.height;
    h = std::max(1, static_cast<int>(std::lround(std::sqrt(n_rays / aspect))));
    w = std::max(1, static_cast<int>(std::lround(static_cast<double>(n_rays) / h)));
  }
  const double focal = 0.5 * w / std::tan(0.5 * cam.fov_deg * M_PI / 180.0);
  const double fy = focal * (static_cast<double>(h) / w) * (static_cast<double>(cam.width) / cam.height);
  Rng rng(mix_seed(seed, 0x5ca7));
  const Pose world_to_object = scene.object_pose().inverse();
  constexpr double kHit = 1e-6;
  constexpr double kFar = 5.0;
  constexpr int kMaxSteps = 300;

  PointCloud cloud;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double ju = uniform(rng, -0.5, 0.5);
      const double jv = uniform(rng, -0.5, 0.5);
      const Vec3 dir_cam((u + 0.5 + ju - 0.5 * w) / focal, (v + 0.5 + jv - 0.5 * h) / fy, 1.0);
      const Vec3 dir = cam.pose.rotate(dir_cam.normalized());
      const Vec3 origin = cam.pose.translation();
      double t = 0.0;
      for (int step = 0; step < kMaxSteps && t < kFar; ++step) {
        const Vec3 p = origin + t * dir;
        const double d_obj = scene.object.sdf(p);
        const double d = std::min(d_obj, scene.obstacle_sdf(p));
        if (d < kHit) {
          if (d_obj <= d) cloud.points.push_back(world_to_object.apply(p));
          break;
        }
        t += d;
      }
    }
  }
  if (cloud.empty()) throw PerceptionError("object not visible from the camera");
  return cloud;
}

std::vector<FingerContact> fingertip_contacts(const Scene& scene, const RobotModel& model, const JointConfig& q,
                                              double tol) {
  if (!(tol > 0.0)) throw ConfigError("contact tolerance must be > 0");
  const Kinematics k = forward_kinematics(model, q);
  std::vector<FingerContact> out;
  out.reserve(k.fingertips.size());
  for (const auto& tip : k.fingertips) {
    FingerContact c;
    c.position = tip.translation();
    c.signed_distance = scene.object.sdf(c.position);
    c.in_contact = std::abs(c.signed_distance) <= tol;
    c.normal = scene.object.gradient(c.position);
    out.push_back(c);
  }
  return out;
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "normal") return Difficulty::normal;
  throw ConfigError("difficulty: expected 'easy' or 'normal', got '" + s + "'");
}

Shape sample_object(std::uint64_t seed, Difficulty difficulty) {
  Rng rng(mix_seed(seed, 0x0b1ec7));
  constexpr double lo = 0.03;
  constexpr double hi = 0.12;
  const int kinds = difficulty == Difficulty::easy ? 2 : 4;
  const int pick = static_cast<int>(std::uniform_int_distribution<int>(0, kinds - 1)(rng));
  switch (pick) {
    case 0: return Shape::sphere(0.5 * uniform(rng, lo, hi));
    case 1: {
      Vec3 e;
      const double base = uniform(rng, lo, hi);
      for (int i = 0; i < 3; ++i) {
        // Aspect ratio <= 2 keeps easy boxes chunky; normal boxes may be flatter.
        const double amin = difficulty == Difficulty::easy ? std::max(lo, base / 2.0) : lo;
        const double amax = difficulty == Difficulty::easy ? std::min(hi, base * 2.0) : hi;
        e[i] = i == 0 ? base : uniform(rng, amin, amax);
      }
      if (difficulty == Difficulty::easy) {
        // Pairwise ratio check; shrink toward the base if violated.
        for (int i = 1; i < 3; ++i)
          for (int j = 1; j < 3; ++j)
            if (e[i] > 2.0 * e[j]) e[i] = 2.0 * e[j];
      }
      return Shape::box(0.5 * e);
    }
    case 2: {
      const double diameter = uniform(rng, lo, 0.8 * hi);
      const double length = uniform(rng, std::max(lo, diameter * 1.05), hi);
      return Shape::capsule(0.5 * diameter, 0.5 * (length - diameter));
    }
    default: {
      const double diameter = uniform(rng, lo, hi);
      const double height = uniform(rng, lo, hi);
      return Shape::cylinder(0.5 * diameter, 0.5 * height);
    }
  }
}

Json WorldConfig::to_json() const {
  return {{"table_top", table_top},
          {"table_center_xy", Json::array({table_center_xy.x(), table_center_xy.y()})},
          {"table_half_extents", vec3_to_json(table_half_extents)},
          {"object_x_range", Json::array({object_x_min, object_x_max})},
          {"object_y_range", Json::array({object_y_min, object_y_max})},
          {"difficulty", difficulty == Difficulty::easy ? "easy" : "normal"},
          {"blocked_fraction", blocked_fraction},
          {"camera",
           {{"pose", pose_to_json(camera.pose)},
            {"fov_deg", camera.fov_deg},
            {"width", camera.width},
            {"height", camera.height}}}};
}

WorldConfig WorldConfig::from_json(const Json& j) {
  WorldConfig c;
  const std::string ctx = "world";
  c.table_top = value_or<double>(j, "table_top", c.table_top, ctx);
  if (j.contains("table_center_xy")) {
    const auto& t = j.at("table_center_xy");
    if (!t.is_array() || t.size() != 2) throw ConfigError("world.table_center_xy: expected [x, y]");
    c.table_center_xy = Vec3(t[0].get<double>(), t[1].get<double>(), 0.0);
  }
  if (j.contains("table_half_extents"))
    c.table_half_extents = vec3_from_json(j.at("table_half_extents"), "world.table_half_extents");
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& r = j.at(key);
    if (!r.is_array() || r.size() != 2 || !(r[0].get<double>() <= r[1].get<double>()))
      throw ConfigError(std::string("world.") + key + ": expected [lo, hi] with lo <= hi");
    lo = r[0].get<double>();
    hi = r[1].get<double>();
  };
  range("object_x_range", c.object_x_min, c.object_x_max);
  range("object_y_range", c.object_y_min, c.object_y_max);
  c.difficulty = difficulty_from_string(value_or<std::string>(j, "difficulty", "normal", ctx));
  c.blocked_fraction = value_or<double>(j, "blocked_fraction", c.blocked_fraction, ctx);
  if (c.blocked_fraction < 0.0 || c.blocked_fraction > 1.0) throw ConfigError("world.blocked_fraction: must be in [0, 1]");
  if (j.contains("camera")) {
    Json wrapper = {{"object", Shape::sphere(0.05).to_json()}, {"camera", j.at("camera")}};
    c.camera = Scene::from_json(wrapper).camera;
  }
  return c;
}

bool scene_is_blocked(std::uint64_t scene_seed, const WorldConfig& config) {
  Rng rng(mix_seed(scene_seed, 0xb10c));
  return uniform(rng, 0.0, 1.0) < config.blocked_fraction;
}

Scene make_scene(std::uint64_t scene_seed, const WorldConfig& config) {
  return make_scene(scene_seed, config, scene_is_blocked(scene_seed, config));
}

Scene make_scene(std::uint64_t scene_seed, const WorldConfig& config, bool blocked) {
  Rng rng(mix_seed(scene_seed, 0x5ce7e));
  Scene scene;
  scene.camera = config.camera;

  const Vec3& th = config.table_half_extents;
  scene.obstacles.push_back(
      Shape::box(th, Pose::translation_only({config.table_center_xy.x(), config.table_center_xy.y(), config.table_top - th.z()})));

  Shape object = sample_object(mix_seed(scene_seed, 0x0b1), config.difficulty);
  const Vec3 ext = object.extents();
  const double ox = uniform(rng, config.object_x_min, config.object_x_max);
  const double oy = uniform(rng, config.object_y_min, config.object_y_max);
  const double yaw = uniform(rng, -M_PI, M_PI);
  constexpr double kRestGap = 5e-4;
  const double oz = config.table_top + 0.5 * ext.z() + kRestGap;
  object.pose = Pose(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())), Vec3(ox, oy, oz));
  scene.object = object;

  if (blocked) {
    Rng orng(mix_seed(scene_seed, 0x0b57));
    const double radius = 0.5 * std::hypot(ext.x(), ext.y());
    const double top = config.table_top + ext.z();
    const double wall_half_h = 0.5 * (ext.z() + 0.20);
    const double wall_cz = config.table_top + wall_half_h;
    bool left = uniform(orng, 0, 1) < 0.6;
    bool right = uniform(orng, 0, 1) < 0.6;
    bool back = uniform(orng, 0, 1) < 0.6;
    bool board = uniform(orng, 0, 1) < 0.6;
    if (static_cast<int>(left) + right + back + board < 2) {
      left = true;
      board = true;
    }
    auto clearance = [&] { return uniform(orng, 0.03, 0.07); };
    if (left)
      scene.obstacles.push_back(
          Shape::box({0.16, 0.01, wall_half_h}, Pose::translation_only({ox, oy + radius + clearance() + 0.01, wall_cz})));
    if (right)
      scene.obstacles.push_back(
          Shape::box({0.16, 0.01, wall_half_h}, Pose::translation_only({ox, oy - radius - clearance() - 0.01, wall_cz})));
    if (back)
      scene.obstacles.push_back(
          Shape::box({0.01, 0.2, wall_half_h}, Pose::translation_only({ox + radius + clearance() + 0.01, oy, wall_cz})));
    if (board) {
      const double z = top + uniform(orng, 0.06, 0.10) + 0.01;
      scene.obstacles.push_back(Shape::box({0.14, 0.2, 0.01}, Pose::translation_only({ox + 0.14, oy, z})));
    }
  }
  return scene;
}

}  // namespace fpte
