#include "fpte/bps.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fpte::bps {

BasisSet make_basis(int size, double radius, std::uint64_t seed) {
  if (size < 1) throw ConfigError("bps: basis size must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("bps: basis radius must be > 0");
  BasisSet basis;
  basis.size = size;
  basis.radius = radius;
  basis.seed = seed;
  basis.points.reserve(static_cast<std::size_t>(size));
  Rng rng(mix_seed(seed, 0xb95));
  while (static_cast<int>(basis.points.size()) < size) {
    const Vec3 p(uniform(rng, -radius, radius), uniform(rng, -radius, radius), uniform(rng, -radius, radius));
    if (p.squaredNorm() <= radius * radius) basis.points.push_back(p);
  }
  return basis;
}

namespace {

BpsEncoding encode_shifted(const BasisSet& basis, const PointCloud& cloud, const Vec3& shift) {
  if (cloud.empty()) throw Error("bps: cannot encode an empty point cloud");
  BpsEncoding enc;
  enc.centroid = shift;
  enc.values.resize(basis.size);
  // Each basis point is independent; the loop order over cloud points is fixed
  // so results do not depend on how basis points are partitioned.
  for (int i = 0; i < basis.size; ++i) {
    const Vec3 b = basis.points[static_cast<std::size_t>(i)] + shift;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : cloud.points) best = std::min(best, (b - p).squaredNorm());
    enc.values[i] = std::sqrt(best);
  }
  return enc;
}

}  // namespace

BpsEncoding encode(const BasisSet& basis, const PointCloud& cloud) {
  return encode_shifted(basis, cloud, Vec3::Zero());
}

BpsEncoding encode_centered(const BasisSet& basis, const PointCloud& cloud) {
  if (cloud.empty()) throw Error("bps: cannot encode an empty point cloud");
  return encode_shifted(basis, cloud, cloud.centroid());
}

void write_basis(const std::string& path, const BasisSet& basis) {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << std::setprecision(17) << "bps " << basis.size << ' ' << basis.radius << ' ' << basis.seed << '\n';
  for (const auto& p : basis.points) ss << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  write_text_file(path, ss.str());
}

BasisSet read_basis(const std::string& path) {
  std::istringstream in(read_text_file(path));
  in.imbue(std::locale::classic());
  std::string tag;
  int size = 0;
  double radius = 0.0;
  std::uint64_t seed = 0;
  if (!(in >> tag >> size >> radius >> seed) || tag != "bps") throw IoError(path + ": bad basis header");
  BasisSet basis = make_basis(size, radius, seed);
  for (int i = 0; i < size; ++i) {
    Vec3 p;
    if (!(in >> p.x() >> p.y() >> p.z())) throw IoError(path + ": truncated basis file");
    if (p != basis.points[static_cast<std::size_t>(i)]) throw IoError(path + ": stored points do not match header");
  }
  return basis;
}

}  // namespace fpte::bps
