#pragma once

// Closed triangle meshes of simple solids, used as toy datasets.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/pointcloud.hpp"

namespace mf3d {

namespace detail {

/// Quad strip grid over a (u, v) parameterization; rows are rings, columns wrap.
template <class F>
void add_wrapped_grid(TriangleMesh& mesh, std::size_t rings, std::size_t segments, F&& pos) {
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (std::size_t i = 0; i < rings; ++i)
    for (std::size_t j = 0; j < segments; ++j) mesh.vertices.push_back(pos(i, j));
  auto at = [&](std::size_t i, std::size_t j) { return base + static_cast<std::uint32_t>(i * segments + j % segments); };
  for (std::size_t i = 0; i + 1 < rings; ++i)
    for (std::size_t j = 0; j < segments; ++j) {
      mesh.faces.push_back({at(i, j), at(i, j + 1), at(i + 1, j + 1)});
      mesh.faces.push_back({at(i, j), at(i + 1, j + 1), at(i + 1, j)});
    }
}

/// Fan from a new apex vertex to a ring of existing vertices.
inline void add_fan(TriangleMesh& mesh, const Vec3& apex, std::uint32_t ring_begin, std::size_t segments,
                    bool flip) {
  const auto c = static_cast<std::uint32_t>(mesh.vertices.size());
  mesh.vertices.push_back(apex);
  for (std::size_t j = 0; j < segments; ++j) {
    const auto a = ring_begin + static_cast<std::uint32_t>(j);
    const auto b = ring_begin + static_cast<std::uint32_t>((j + 1) % segments);
    if (flip)
      mesh.faces.push_back({c, b, a});
    else
      mesh.faces.push_back({c, a, b});
  }
}

}  // namespace detail

inline TriangleMesh make_sphere(double radius = 1.0, std::size_t rings = 24, std::size_t segments = 48,
                                Vec3 axes = {1.0, 1.0, 1.0}) {
  TriangleMesh m;
  const double pi = std::numbers::pi;
  detail::add_wrapped_grid(m, rings - 1, segments, [&](std::size_t i, std::size_t j) {
    const double th = pi * static_cast<double>(i + 1) / static_cast<double>(rings);
    const double ph = 2.0 * pi * static_cast<double>(j) / static_cast<double>(segments);
    return Vec3{radius * axes[0] * std::sin(th) * std::cos(ph), radius * axes[1] * std::sin(th) * std::sin(ph),
                radius * axes[2] * std::cos(th)};
  });
  detail::add_fan(m, {0.0, 0.0, radius * axes[2]}, 0, segments, true);
  detail::add_fan(m, {0.0, 0.0, -radius * axes[2]}, static_cast<std::uint32_t>((rings - 2) * segments), segments,
                  false);
  for (auto& f : m.faces) std::swap(f[1], f[2]);  // wind outward
  return m;
}

inline TriangleMesh make_box(double sx = 1.0, double sy = 1.0, double sz = 1.0) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back({(i & 1 ? 0.5 : -0.5) * sx, (i & 2 ? 0.5 : -0.5) * sy, (i & 4 ? 0.5 : -0.5) * sz});
  const std::uint32_t quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// Closed cylinder along z; `top_radius` 0 gives a cone.
inline TriangleMesh make_frustum(double bottom_radius, double top_radius, double height, std::size_t segments = 48,
                                 std::size_t rings = 8) {
  TriangleMesh m;
  const double pi = std::numbers::pi;
  const bool apex = top_radius == 0.0;
  const std::size_t grid_rings = apex ? rings : rings + 1;
  detail::add_wrapped_grid(m, grid_rings, segments, [&](std::size_t i, std::size_t j) {
    const double t = static_cast<double>(i) / static_cast<double>(rings);
    const double r = bottom_radius + (top_radius - bottom_radius) * t;
    const double ph = 2.0 * pi * static_cast<double>(j) / static_cast<double>(segments);
    return Vec3{r * std::cos(ph), r * std::sin(ph), height * (t - 0.5)};
  });
  detail::add_fan(m, {0.0, 0.0, -0.5 * height}, 0, segments, true);
  const auto top_ring = static_cast<std::uint32_t>((grid_rings - 1) * segments);
  detail::add_fan(m, {0.0, 0.0, 0.5 * height}, top_ring, segments, false);
  return m;
}

inline TriangleMesh make_cylinder(double radius = 0.5, double height = 1.5, std::size_t segments = 48) {
  return make_frustum(radius, radius, height, segments);
}

inline TriangleMesh make_cone(double radius = 0.6, double height = 1.2, std::size_t segments = 48) {
  return make_frustum(radius, 0.0, height, segments);
}

inline TriangleMesh make_torus(double major = 1.0, double minor = 0.35, std::size_t rings = 48,
                               std::size_t segments = 24) {
  TriangleMesh m;
  const double pi = std::numbers::pi;
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  for (std::size_t i = 0; i < rings; ++i)
    for (std::size_t j = 0; j < segments; ++j) {
      const double u = 2.0 * pi * static_cast<double>(i) / static_cast<double>(rings);
      const double v = 2.0 * pi * static_cast<double>(j) / static_cast<double>(segments);
      m.vertices.push_back({(major + minor * std::cos(v)) * std::cos(u), (major + minor * std::cos(v)) * std::sin(u),
                            minor * std::sin(v)});
    }
  auto at = [&](std::size_t i, std::size_t j) {
    return base + static_cast<std::uint32_t>((i % rings) * segments + j % segments);
  };
  for (std::size_t i = 0; i < rings; ++i)
    for (std::size_t j = 0; j < segments; ++j) {
      m.faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      m.faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
    }
  return m;
}

inline TriangleMesh make_tetrahedron() {
  TriangleMesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

inline TriangleMesh make_octahedron() {
  TriangleMesh m;
  m.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  return m;
}

/// Named toy shapes; `variant` perturbs proportions so a class has distinct members.
inline TriangleMesh make_primitive(const std::string& name, int variant = 0) {
  const double t = 1.0 + 0.15 * variant;
  if (name == "sphere") return make_sphere(1.0);
  if (name == "ellipsoid") return make_sphere(1.0, 24, 48, {1.0 * t, 0.7, 0.45});
  if (name == "box") return make_box(1.0 * t, 0.8, 0.6 / t);
  if (name == "cube") return make_box(1.0, 1.0, 1.0);
  if (name == "cylinder") return make_cylinder(0.5, 1.5 * t);
  if (name == "cone") return make_cone(0.6, 1.2 * t);
  if (name == "torus") return make_torus(1.0, 0.35 / t);
  if (name == "tetrahedron") return make_tetrahedron();
  if (name == "octahedron") return make_octahedron();
  throw InputError("unknown primitive '" + name + "'");
}

inline const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {"sphere", "ellipsoid",   "box",       "cube",
                                                 "cylinder", "cone",      "torus",     "tetrahedron",
                                                 "octahedron"};
  return names;
}

}  // namespace mf3d
