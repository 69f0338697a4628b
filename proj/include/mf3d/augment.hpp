#pragma once

// Training-time augmentation. Targets computed on the canonical cloud are
// carried along analytically: normals rotate with the points, variations are
// untouched (rotation and uniform scaling leave eigenvalue ratios alone).

#include <cmath>
#include <numbers>

#include "mf3d/config.hpp"
#include "mf3d/pointcloud.hpp"
#include "mf3d/rng.hpp"
#include "mf3d/vec3.hpp"

namespace mf3d {

struct Augmentation {
  Mat3 rotation{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  double scale = 1.0;
  Vec3 translation{0.0, 0.0, 0.0};
};

inline constexpr double kScaleMin = 0.8;
inline constexpr double kScaleMax = 1.25;
inline constexpr double kTranslationRange = 0.1;

/// Uniform rotation over SO(3) from a normalized 4D Gaussian (unit quaternion).
inline Mat3 random_rotation(Rng& rng) {
  double w, x, y, z, n;
  do {
    w = rng.normal();
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    n = std::sqrt(w * w + x * x + y * y + z * z);
  } while (n < 1e-12);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

/// Draws in a fixed order (rotation, scale, translation) so enabling one flag
/// does not shift the random stream seen by the others' draws.
inline Augmentation draw_augmentation(const AugmentFlags& flags, Rng& rng) {
  Augmentation a;
  if (flags.rotation)
    a.rotation = flags.full_so3 ? random_rotation(rng) : rotation_z(rng.uniform(0.0, 2.0 * std::numbers::pi));
  if (flags.scale) a.scale = rng.uniform(kScaleMin, kScaleMax);
  if (flags.translation)
    for (auto& t : a.translation) t = rng.uniform(-kTranslationRange, kTranslationRange);
  return a;
}

/// p' = s R p + t, n' = R n, v' = v.
inline PointCloud apply_augmentation(const PointCloud& cloud, const Augmentation& a) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(a.scale * (a.rotation * p) + a.translation);
  out.normals.reserve(cloud.normals.size());
  for (const auto& n : cloud.normals) out.normals.push_back(normalized(a.rotation * n));
  out.variations = cloud.variations;
  return out;
}

inline PointCloud augment(const PointCloud& cloud, const AugmentFlags& flags, Rng& rng) {
  return apply_augmentation(cloud, draw_augmentation(flags, rng));
}

inline PointCloud augment(const PointCloud& cloud, const AugmentFlags& flags, std::uint64_t seed) {
  Rng rng(seed);
  return augment(cloud, flags, rng);
}

inline PointCloud rotate_z(const PointCloud& cloud, double angle) {
  Augmentation a;
  a.rotation = rotation_z(angle);
  return apply_augmentation(cloud, a);
}

}  // namespace mf3d
