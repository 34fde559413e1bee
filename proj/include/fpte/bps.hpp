#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpte/geometry.hpp"

namespace fpte::bps {

/// D fixed reference points sampled uniformly in a ball of radius r.
struct BasisSet {
  std::vector<Vec3> points;
  int size = 0;
  double radius = 0.15;
  std::uint64_t seed = 0;
};

/// Fixed-length object representation: distance from each basis point to
/// its nearest cloud point. `centroid` is the shift that was subtracted from
/// the cloud before encoding (zero for a raw encode).
struct BpsEncoding {
  VecX values;
  Vec3 centroid = Vec3::Zero();
};

/// Rejection sampling from the enclosing cube; bit-identical per (D, r, seed).
BasisSet make_basis(int size, double radius, std::uint64_t seed);

/// values[i] = min_p |b_i - p|. Throws Error on an empty cloud.
BpsEncoding encode(const BasisSet& basis, const PointCloud& cloud);

/// Shifts the cloud so its centroid sits at the origin, then encodes.
BpsEncoding encode_centered(const BasisSet& basis, const PointCloud& cloud);

/// "bps <D> <r> <seed>" header followed by one point per line.
void write_basis(const std::string& path, const BasisSet& basis);

/// Reads the header, regenerates the basis and checks it against the stored
/// points. Throws IoError on mismatch.
BasisSet read_basis(const std::string& path);

}  // namespace fpte::bps
