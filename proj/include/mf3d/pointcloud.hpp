#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/vec3.hpp"

namespace mf3d {

/// Ordered 3D points with optional per-point normal and surface variation.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;       // empty when absent
  std::vector<double> variations;  // empty when absent

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_variations() const { return !variations.empty(); }
};

inline constexpr double kMaxVariation = 1.0 / 3.0;

/// Throws InputError when a PointCloud invariant does not hold.
inline void validate(const PointCloud& cloud) {
  for (std::size_t i = 0; i < cloud.points.size(); ++i)
    if (!is_finite(cloud.points[i]))
      throw InputError("point " + std::to_string(i) + " has a non-finite coordinate");
  if (cloud.has_normals()) {
    if (cloud.normals.size() != cloud.points.size())
      throw InputError("normal count " + std::to_string(cloud.normals.size()) + " != point count " +
                       std::to_string(cloud.points.size()));
    for (std::size_t i = 0; i < cloud.normals.size(); ++i)
      if (!(std::abs(norm(cloud.normals[i]) - 1.0) <= 1e-4))
        throw InputError("normal " + std::to_string(i) + " is not unit length");
  }
  if (cloud.has_variations()) {
    if (cloud.variations.size() != cloud.points.size())
      throw InputError("variation count != point count");
    for (std::size_t i = 0; i < cloud.variations.size(); ++i) {
      const double v = cloud.variations[i];
      if (!(v >= 0.0 && v <= kMaxVariation + 1e-6))
        throw InputError("variation " + std::to_string(i) + " outside [0, 1/3]");
    }
  }
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  double triangle_area(std::size_t f) const {
    const auto& t = faces[f];
    return 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
  }

  double area() const {
    double total = 0.0;
    for (std::size_t f = 0; f < faces.size(); ++f) total += triangle_area(f);
    return total;
  }
};

inline void validate(const TriangleMesh& mesh) {
  for (std::size_t f = 0; f < mesh.faces.size(); ++f)
    for (auto idx : mesh.faces[f])
      if (idx >= mesh.vertices.size())
        throw FormatError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                          " but mesh has " + std::to_string(mesh.vertices.size()) + " vertices");
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    if (!is_finite(mesh.vertices[i]))
      throw FormatError("vertex " + std::to_string(i) + " has a non-finite coordinate");
}

/// Similarity transform applied by normalize_unit_sphere: x' = scale * (x - center).
struct Normalization {
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;
};

/// Centers the cloud on its bounding-box center and scales it into the unit sphere.
inline Normalization normalize_unit_sphere(PointCloud& cloud) {
  Normalization t;
  if (cloud.empty()) return t;
  Vec3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const auto& p : cloud.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  t.center = 0.5 * (lo + hi);
  double radius = 0.0;
  for (const auto& p : cloud.points) radius = std::max(radius, norm(p - t.center));
  t.scale = radius > 0.0 ? 1.0 / radius : 1.0;
  for (auto& p : cloud.points) p = t.scale * (p - t.center);
  return t;
}

}  // namespace mf3d
