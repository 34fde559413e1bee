#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpte/config.hpp"
#include "fpte/robot_model.hpp"
#include "fpte/se3.hpp"

namespace fpte {

enum class ShapeKind { box, sphere, capsule, cylinder };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& s);

/// Convex primitive with an exact signed distance. params:
///   box      half extents (x, y, z)
///   sphere   (radius, -, -)
///   capsule  (radius, half segment length along z, -)
///   cylinder (radius, half height along z, -)
struct Shape {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 params = Vec3(0.05, 0.0, 0.0);
  Pose pose;  // shape frame in world

  static Shape box(const Vec3& half_extents, const Pose& pose = {});
  static Shape sphere(double radius, const Pose& pose = {});
  static Shape capsule(double radius, double half_length, const Pose& pose = {});
  static Shape cylinder(double radius, double half_height, const Pose& pose = {});

  double local_sdf(const Vec3& p) const;
  Vec3 local_gradient(const Vec3& p) const;

  double sdf(const Vec3& world_point) const { return local_sdf(pose.inverse().apply(world_point)); }
  Vec3 gradient(const Vec3& world_point) const;

  /// Full axis-aligned extents in the shape frame.
  Vec3 extents() const;

  /// Throws ConfigError when a dimension is not positive.
  void validate() const;

  Json to_json() const;
  static Shape from_json(const Json& j, const std::string& context);
};

/// Pinhole camera looking along its +z axis (x right, y down).
struct Camera {
  Pose pose;
  double fov_deg = 35.0;  // horizontal field of view
  int width = 128;
  int height = 128;

  static Camera look_at(const Vec3& eye, const Vec3& target, double fov_deg, int width, int height);
};

struct Scene {
  Shape object;  // object frame == object.pose (T_RO)
  std::vector<Shape> obstacles;
  Camera camera;

  const Pose& object_pose() const { return object.pose; }

  double sdf(const Vec3& p) const;
  double obstacle_sdf(const Vec3& p) const;
  /// Gradient of the minimizing shape at p.
  Vec3 gradient(const Vec3& p) const;

  /// Checks shape dimensions and that the object does not start inside an
  /// obstacle (sampled object surface against obstacle SDFs >= -1e-4).
  void validate() const;

  Json to_json() const;
  static Scene from_json(const Json& j);
  static Scene load(const std::string& path);
};

struct PointCloud {
  std::vector<Vec3> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  Vec3 centroid() const;
};

/// One point per line, three space-separated full-precision floats.
void write_cloud(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud(const std::string& path);
std::string format_cloud(const PointCloud& cloud);

/// Sphere-traces a grid of about n_rays rays (camera aspect ratio kept)
/// and returns first hits on the object, in the object frame. The seed
/// jitters each ray inside its pixel. Throws PerceptionError when nothing of
/// the object is visible.
PointCloud render_partial_cloud(const Scene& scene, int n_rays, std::uint64_t seed);

struct FingerContact {
  bool in_contact = false;
  double signed_distance = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  // outward object normal at the fingertip
};

/// finger i is in contact iff |sdf(object, fingertip_i)| <= tol.
std::vector<FingerContact> fingertip_contacts(const Scene& scene, const RobotModel& model, const JointConfig& q,
                                              double tol);

enum class Difficulty { easy, normal };

Difficulty difficulty_from_string(const std::string& s);

/// Random primitive with full extents in [0.03, 0.12] m, deterministic per
/// seed. easy: spheres and boxes with aspect ratio <= 2.
Shape sample_object(std::uint64_t seed, Difficulty difficulty);

/// Procedural table-top world used by data generation and benchmarks.
struct WorldConfig {
  double table_top = 0.15;
  Vec3 table_center_xy = Vec3(0.85, 0.0, 0.0);
  Vec3 table_half_extents = Vec3(0.5, 0.6, 0.1);
  double object_x_min = 0.70, object_x_max = 0.85;
  double object_y_min = -0.15, object_y_max = 0.15;
  Difficulty difficulty = Difficulty::normal;
  double blocked_fraction = 0.3;  // probability of shelf-like obstacles
  Camera camera = Camera::look_at({0.25, 0.0, 0.95}, {0.775, 0.0, 0.2}, 35.0, 128, 128);

  Json to_json() const;
  static WorldConfig from_json(const Json& j);
};

/// Deterministic scene from a seed: object resting on the table at a random
/// position and yaw; with probability blocked_fraction, walls and a top
/// board around it.
Scene make_scene(std::uint64_t scene_seed, const WorldConfig& config);

/// Same as make_scene but forces (or forbids) obstacles.
Scene make_scene(std::uint64_t scene_seed, const WorldConfig& config, bool blocked);

bool scene_is_blocked(std::uint64_t scene_seed, const WorldConfig& config);

}  // namespace fpte
