#pragma once

// Independent reference implementations the tests compare against.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "mf3d.hpp"

namespace oracle {

using mf3d::Vec3;
using mf3d::operator+;
using mf3d::operator-;
using mf3d::operator*;

inline std::vector<Vec3> random_points(mf3d::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<Vec3> p(n);
  for (auto& v : p) v = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return p;
}

inline Vec3 random_unit(mf3d::Rng& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = mf3d::norm(v);
    if (n > 1e-6) return (1.0 / n) * v;
  }
}

/// Uniform samples in the unit ball by rejection.
inline std::vector<Vec3> ball_points(mf3d::Rng& rng, std::size_t n) {
  std::vector<Vec3> out;
  while (out.size() < n) {
    Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (mf3d::dot(v, v) <= 1.0) out.push_back(v);
  }
  return out;
}

/// Sorted full scan: indices of the k closest points, distance then index.
inline std::vector<std::size_t> knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < pts.size(); ++i) d.push_back({mf3d::squared_distance(pts[i], q), i});
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, d.size()); ++i) out.push_back(d[i].second);
  return out;
}

/// FPS recomputing every point's distance to the whole chosen set each round.
inline std::vector<std::size_t> fps(const std::vector<Vec3>& pts, std::size_t count, std::size_t first) {
  std::vector<std::size_t> chosen{first};
  while (chosen.size() < count) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double m = INFINITY;
      for (std::size_t c : chosen) m = std::min(m, mf3d::squared_distance(pts[i], pts[c]));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

/// Eigenvalues of a symmetric 3x3 as roots of its characteristic cubic
/// (trigonometric form), ascending. Computed in long double.
inline std::array<double, 3> cubic_eigenvalues(const mf3d::Mat3& a) {
  using L = long double;
  const L a00 = a[0][0], a01 = a[0][1], a02 = a[0][2], a11 = a[1][1], a12 = a[1][2], a22 = a[2][2];
  const L p1 = a01 * a01 + a02 * a02 + a12 * a12;
  const L q = (a00 + a11 + a22) / 3;
  if (p1 == 0) {
    std::array<double, 3> e{double(a00), double(a11), double(a22)};
    std::sort(e.begin(), e.end());
    return e;
  }
  const L p2 = (a00 - q) * (a00 - q) + (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) + 2 * p1;
  const L p = std::sqrt(p2 / 6);
  const L b00 = (a00 - q) / p, b11 = (a11 - q) / p, b22 = (a22 - q) / p, b01 = a01 / p, b02 = a02 / p, b12 = a12 / p;
  const L det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02);
  L r = det / 2;
  r = std::clamp<L>(r, -1, 1);
  const L phi = std::acos(r) / 3;
  const L pi = std::numbers::pi_v<L>;
  const L e1 = q + 2 * p * std::cos(phi);
  const L e3 = q + 2 * p * std::cos(phi + 2 * pi / 3);
  const L e2 = 3 * q - e1 - e3;
  std::array<double, 3> e{double(e3), double(e2), double(e1)};
  std::sort(e.begin(), e.end());
  return e;
}

/// Exact mask count for ratio = num / den, in integers.
inline std::size_t mask_count(std::size_t k, std::size_t num, std::size_t den) {
  const std::size_t m = (num * k + den - 1) / den;
  return std::min(m, k - 1);
}

/// Multi-head attention assembled from the generic ops.
template <class T>
mf3d::Tensor<T> composed_attention(const mf3d::Tensor<T>& q, const mf3d::Tensor<T>& k, const mf3d::Tensor<T>& v,
                                   std::size_t heads) {
  const std::size_t d = q.dim(-1), dh = d / heads;
  std::vector<mf3d::Tensor<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = mf3d::slice_lastdim(q, h * dh, dh);
    const auto kh = mf3d::slice_lastdim(k, h * dh, dh);
    const auto vh = mf3d::slice_lastdim(v, h * dh, dh);
    const auto s = mf3d::scale(mf3d::matmul(qh, mf3d::transpose(kh)), static_cast<T>(1.0 / std::sqrt(double(dh))));
    outs.push_back(mf3d::matmul(mf3d::softmax_lastdim(s), vh));
  }
  return mf3d::concat(outs, -1);
}

inline double angle_up_to_sign(const Vec3& a, const Vec3& b) {
  const double c = std::abs(mf3d::dot(mf3d::normalized(a), mf3d::normalized(b)));
  return std::acos(std::min(1.0, c));
}

/// Points on the plane z = 0 (optionally tilted by a rotation).
inline std::vector<Vec3> plane_points(mf3d::Rng& rng, std::size_t n) {
  std::vector<Vec3> p(n);
  for (auto& v : p) v = {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0};
  return p;
}

}  // namespace oracle
