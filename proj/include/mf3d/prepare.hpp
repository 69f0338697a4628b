#pragma once

// Dense cloud -> normalized cloud with oriented normals and variations.

#include <cstdint>
#include <string_view>

#include "mf3d/geometry.hpp"
#include "mf3d/io.hpp"

namespace mf3d {

struct PrepareOptions {
  std::size_t samples = 50000;
  std::uint64_t seed = 0;
  TargetOptions targets;
};

struct PrepareStats {
  std::size_t degenerate = 0;
  OrientStats orient;
};

/// Normalizes `cloud` into the unit sphere and computes targets at every point.
inline TargetCache make_target_cache(PointCloud cloud, const TargetOptions& opt = {}, PrepareStats* stats = nullptr) {
  if (cloud.empty()) throw InputError("cannot build targets for an empty cloud");
  validate(cloud);
  normalize_unit_sphere(cloud);
  OrientStats orient;
  const TargetFeatures t = compute_dense_targets(cloud, opt, &orient);
  if (stats) {
    stats->degenerate = t.degenerate;
    stats->orient = orient;
  }
  TargetCache cache;
  cache.neighbor_radius = static_cast<float>(opt.radius);
  cache.points.reserve(cloud.size());
  cache.normals.reserve(cloud.size());
  cache.variations.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    cache.points.push_back(to_float(cloud.points[i]));
    cache.normals.push_back(to_float(t.normals[i]));
    cache.variations.push_back(static_cast<float>(t.variations[i]));
  }
  return cache;
}

inline TargetCache prepare_mesh(const TriangleMesh& mesh, const PrepareOptions& opt = {},
                                PrepareStats* stats = nullptr) {
  return make_target_cache(sample_surface(mesh, opt.samples, opt.seed), opt.targets, stats);
}

/// Stable per-name seed offset (FNV-1a), so each file gets its own sampling stream.
inline std::uint64_t name_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t x = seed ^ h;
  return splitmix64(x);
}

}  // namespace mf3d
