#pragma once

// Local-PCA surface descriptors: covariance about a point, symmetric 3x3
// eigendecomposition, normals with MST sign propagation, surface variation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/kdtree.hpp"
#include "mf3d/log.hpp"
#include "mf3d/parallel.hpp"
#include "mf3d/pointcloud.hpp"

namespace mf3d {

/// Symmetric 3x3 matrix stored as its six independent entries.
struct Covariance3 {
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

  Mat3 matrix() const { return {{{xx, xy, xz}, {xy, yy, yz}, {xz, yz, zz}}}; }

  static Covariance3 from_matrix(const Mat3& m) {
    return {m[0][0], 0.5 * (m[0][1] + m[1][0]), 0.5 * (m[0][2] + m[2][0]), m[1][1], 0.5 * (m[1][2] + m[2][1]),
            m[2][2]};
  }

  double frobenius() const {
    return std::sqrt(xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz));
  }

  bool finite() const {
    return std::isfinite(xx) && std::isfinite(xy) && std::isfinite(xz) && std::isfinite(yy) && std::isfinite(yz) &&
           std::isfinite(zz);
  }
};

/// Eigenvalues ascending; vectors[i] is the unit eigenvector of values[i].
struct EigenDecomp3 {
  std::array<double, 3> values{};
  std::array<Vec3, 3> vectors{};
};

inline constexpr std::size_t kDefaultMinNeighbors = 8;

/// Mean of (p - x)(p - x)^T over the given neighbor indices, in the order given.
inline Covariance3 covariance_about(const std::vector<Vec3>& points, const Vec3& p,
                                    const std::vector<Neighbor>& neighbors) {
  Covariance3 c;
  if (neighbors.empty()) return c;
  for (const auto& nb : neighbors) {
    const Vec3 d = p - points[nb.index];
    c.xx += d[0] * d[0];
    c.xy += d[0] * d[1];
    c.xz += d[0] * d[2];
    c.yy += d[1] * d[1];
    c.yz += d[1] * d[2];
    c.zz += d[2] * d[2];
  }
  const double inv = 1.0 / static_cast<double>(neighbors.size());
  c.xx *= inv;
  c.xy *= inv;
  c.xz *= inv;
  c.yy *= inv;
  c.yz *= inv;
  c.zz *= inv;
  return c;
}

/// Neighbors of p: the r-ball restricted to the `pool` nearest points (pool == 0
/// means unrestricted). Falls back to the min_neighbors nearest when the ball is
/// too sparse.
inline std::vector<Neighbor> select_neighborhood(const KdTree& tree, const Vec3& p, double r,
                                                 std::size_t min_neighbors, std::size_t pool = 0) {
  if (!(r > 0.0)) throw InputError("neighborhood radius must be > 0");
  if (tree.size() == 0) throw InputError("dense cloud is empty");
  if (tree.size() < min_neighbors)
    throw InputError("dense cloud has " + std::to_string(tree.size()) + " points, fewer than min_neighbors=" +
                     std::to_string(min_neighbors));
  std::vector<Neighbor> nb;
  if (pool > 0) {
    auto cand = tree.knn(p, std::max(pool, min_neighbors));
    const double r2 = r * r;
    std::size_t inside = 0;
    while (inside < std::min(pool, cand.size()) && cand[inside].dist2 <= r2) ++inside;
    if (inside >= min_neighbors) {
      cand.resize(inside);
    } else {
      cand.resize(min_neighbors);
    }
    nb = std::move(cand);
  } else {
    nb = tree.radius(p, r);
    if (nb.size() < min_neighbors) nb = tree.knn(p, min_neighbors);
  }
  return nb;
}

/// Covariance of the dense surface around p within radius r.
inline Covariance3 local_covariance(const KdTree& tree, const Vec3& p, double r,
                                    std::size_t min_neighbors = kDefaultMinNeighbors, std::size_t pool = 0) {
  return covariance_about(tree.points(), p, select_neighborhood(tree, p, r, min_neighbors, pool));
}

inline Covariance3 local_covariance(const PointCloud& dense, const Vec3& p, double r,
                                    std::size_t min_neighbors = kDefaultMinNeighbors) {
  const KdTree tree(dense.points);
  return local_covariance(tree, p, r, min_neighbors);
}

namespace detail {

// Flip v so its largest-magnitude component (lowest index on ties) is positive.
inline Vec3 canonical_sign(Vec3 v) {
  int best = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(v[a]) > std::abs(v[best])) best = a;
  return v[best] < 0.0 ? -v : v;
}

}  // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges quadratically; the loop stops once the off-diagonal mass is at
/// rounding level relative to the diagonal. Eigenvectors are sign-canonicalized
/// (largest component positive) so repeated calls and repeated eigenvalues
/// resolve the same way.
inline EigenDecomp3 eigh3(const Covariance3& c) {
  if (!c.finite()) throw NumericError("eigh3: non-finite matrix entry");
  Mat3 a = c.matrix();
  Mat3 v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off == 0.0 || off <= 1e-36 * diag) break;
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      if (a[p][q] == 0.0) continue;
      const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
      double t;
      if (std::abs(theta) > 1e150)
        t = 0.5 / theta;
      else
        t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double cs = 1.0 / std::sqrt(t * t + 1.0);
      const double sn = t * cs;
      // a <- J^T a J with J the (p, q) plane rotation.
      for (int k = 0; k < 3; ++k) {
        const double akp = a[k][p], akq = a[k][q];
        a[k][p] = cs * akp - sn * akq;
        a[k][q] = sn * akp + cs * akq;
      }
      for (int k = 0; k < 3; ++k) {
        const double apk = a[p][k], aqk = a[q][k];
        a[p][k] = cs * apk - sn * aqk;
        a[q][k] = sn * apk + cs * aqk;
      }
      a[p][q] = a[q][p] = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double vkp = v[k][p], vkq = v[k][q];
        v[k][p] = cs * vkp - sn * vkq;
        v[k][q] = sn * vkp + cs * vkq;
      }
    }
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] < a[j][j]; });
  EigenDecomp3 d;
  for (int i = 0; i < 3; ++i) {
    const int col = order[i];
    d.values[i] = a[col][col];
    d.vectors[i] = detail::canonical_sign(normalized(Vec3{v[0][col], v[1][col], v[2][col]}));
  }
  return d;
}

struct NormalEstimate {
  Vec3 normal{0.0, 0.0, 1.0};
  /// The smallest eigenvalue is repeated, so the normal is a tie-broken choice.
  bool degenerate = false;
};

inline constexpr double kDegenerateGap = 1e-10;

/// Unit eigenvector of the smallest eigenvalue; sign is not yet meaningful.
inline NormalEstimate estimate_normal(const EigenDecomp3& d) {
  NormalEstimate e;
  e.normal = normalized(d.vectors[0]);
  const double scale = std::max(0.0, d.values[2]);
  e.degenerate = (d.values[1] - d.values[0]) <= kDegenerateGap * scale;
  return e;
}

/// lambda_min / (lambda_1 + lambda_2 + lambda_3), in [0, 1/3].
inline double surface_variation(const EigenDecomp3& d) {
  for (double v : d.values)
    if (!std::isfinite(v)) throw NumericError("surface_variation: non-finite eigenvalue");
  std::array<double, 3> l = d.values;
  for (double& v : l)
    if (v < 0.0) v = 0.0;  // tiny negatives from rounding
  const double sum = l[0] + l[1] + l[2];
  if (sum <= 1e-18) return 0.0;
  return std::min(l[0] / sum, kMaxVariation);
}

// ---------------------------------------------------------------------------
// Normal orientation

struct OrientStats {
  std::size_t components = 0;
  std::vector<std::pair<std::size_t, std::size_t>> tree_edges;  // MST (forest) edges
};

namespace detail {

struct DisjointSets {
  std::vector<std::size_t> parent, rank;
  explicit DisjointSets(std::size_t n) : parent(n), rank(n, 0) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank[a] < rank[b]) std::swap(a, b);
    parent[b] = a;
    if (rank[a] == rank[b]) ++rank[a];
    return true;
  }
};

}  // namespace detail

/// Consistent normal signs by propagation over a minimum spanning tree of the
/// k-NN graph, edge weight 1 - |n_i . n_j|. Each connected component is seeded
/// at its highest point (max z, lowest index on ties), whose normal is forced to
/// point up, and a neighbor is flipped whenever it disagrees with its tree parent.
inline std::vector<Vec3> orient_normals(const KdTree& tree, std::vector<Vec3> normals, std::size_t k = 12,
                                        OrientStats* stats = nullptr) {
  const auto& pts = tree.points();
  const std::size_t n = pts.size();
  if (normals.size() != n) throw InputError("orient_normals: normal count does not match point count");
  if (k < 2) throw InputError("orient_normals: k must be >= 2");
  for (auto& nm : normals) nm = normalized(nm);

  struct Edge {
    double w;
    std::size_t a, b;
    bool operator<(const Edge& o) const {
      return w < o.w || (w == o.w && (a < o.a || (a == o.a && b < o.b)));
    }
  };
  std::vector<std::vector<Neighbor>> knn(n);
  parallel_for(n, 512, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) knn[i] = tree.knn(pts[i], k + 1);
  });
  std::vector<Edge> edges;
  edges.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t used = 0;
    for (const auto& nb : knn[i]) {
      if (nb.index == i) continue;
      if (used++ == k) break;
      const std::size_t a = std::min(i, nb.index), b = std::max(i, nb.index);
      edges.push_back({1.0 - std::abs(dot(normals[a], normals[b])), a, b});
    }
  }
  std::sort(edges.begin(), edges.end());

  detail::DisjointSets sets(n);
  std::vector<std::vector<std::size_t>> adj(n);
  std::vector<std::pair<std::size_t, std::size_t>> tree_edges;
  for (const auto& e : edges) {
    if (sets.unite(e.a, e.b)) {
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
      tree_edges.emplace_back(e.a, e.b);
    }
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());

  // Seed per component: max z, lowest index on ties.
  std::vector<std::size_t> seed_of_root(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = sets.find(i);
    std::size_t& s = seed_of_root[r];
    if (s == n || pts[i][2] > pts[s][2]) s = i;
  }
  std::vector<std::size_t> seeds;
  for (std::size_t r = 0; r < n; ++r)
    if (seed_of_root[r] != n) seeds.push_back(seed_of_root[r]);
  std::sort(seeds.begin(), seeds.end());
  if (seeds.size() > 1)
    warn("k-NN graph has " + std::to_string(seeds.size()) + " disconnected components; orienting each independently");

  std::vector<char> visited(n, 0);
  std::vector<std::size_t> queue;
  for (std::size_t seed : seeds) {
    if (normals[seed][2] < 0.0) normals[seed] = -normals[seed];
    visited[seed] = 1;
    queue.assign(1, seed);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t u = queue[head];
      for (std::size_t w : adj[u]) {
        if (visited[w]) continue;
        visited[w] = 1;
        if (dot(normals[u], normals[w]) < 0.0) normals[w] = -normals[w];
        queue.push_back(w);
      }
    }
  }
  if (stats) {
    stats->components = seeds.size();
    stats->tree_edges = std::move(tree_edges);
  }
  return normals;
}

inline PointCloud orient_normals(const PointCloud& cloud, std::size_t k = 12, OrientStats* stats = nullptr) {
  if (!cloud.has_normals()) throw InputError("orient_normals: cloud has no normals");
  const KdTree tree(cloud.points);
  PointCloud out = cloud;
  out.normals = orient_normals(tree, cloud.normals, k, stats);
  return out;
}

// ---------------------------------------------------------------------------
// Target features

struct TargetOptions {
  double radius = 0.1;
  std::size_t pool = 128;  // nearest-neighbor pool intersected with the r-ball
  std::size_t min_neighbors = kDefaultMinNeighbors;
  std::size_t orient_k = 12;
};

struct TargetFeatures {
  std::vector<Vec3> normals;
  std::vector<double> variations;
  std::size_t degenerate = 0;  // points whose normal came from a tie-break

  std::size_t size() const { return normals.size(); }
};

struct PointDescriptor {
  Vec3 normal;
  double variation;
  bool degenerate;
};

inline PointDescriptor describe_point(const KdTree& dense, const Vec3& p, const TargetOptions& opt) {
  const auto cov = local_covariance(dense, p, opt.radius, opt.min_neighbors, opt.pool);
  const auto eig = eigh3(cov);
  const auto est = estimate_normal(eig);
  return {est.normal, surface_variation(eig), est.degenerate};
}

/// Oriented normals and variations for every point of the dense cloud itself.
inline TargetFeatures compute_dense_targets(const KdTree& dense, const TargetOptions& opt = {},
                                            OrientStats* stats = nullptr) {
  const auto& pts = dense.points();
  TargetFeatures t;
  t.normals.resize(pts.size());
  t.variations.resize(pts.size());
  std::vector<char> degenerate(pts.size(), 0);
  parallel_for(pts.size(), 256, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto d = describe_point(dense, pts[i], opt);
      t.normals[i] = d.normal;
      t.variations[i] = d.variation;
      degenerate[i] = d.degenerate;
    }
  });
  t.degenerate = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
  t.normals = orient_normals(dense, std::move(t.normals), opt.orient_k, stats);
  return t;
}

inline TargetFeatures compute_dense_targets(const PointCloud& dense, const TargetOptions& opt = {},
                                            OrientStats* stats = nullptr) {
  const KdTree tree(dense.points);
  return compute_dense_targets(tree, opt, stats);
}

/// Targets at arbitrary query points: local PCA on the dense cloud, with signs
/// copied from the nearest oriented dense normal.
inline TargetFeatures compute_targets(const PointCloud& dense, const PointCloud& queries,
                                      const TargetOptions& opt = {}) {
  const KdTree tree(dense.points);
  const TargetFeatures oriented = compute_dense_targets(tree, opt);
  TargetFeatures t;
  t.normals.resize(queries.size());
  t.variations.resize(queries.size());
  std::vector<char> degenerate(queries.size(), 0);
  parallel_for(queries.size(), 256, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& q = queries.points[i];
      auto d = describe_point(tree, q, opt);
      d.normal = normalized(d.normal);
      const auto nearest = tree.knn(q, 1).front().index;
      if (dot(d.normal, oriented.normals[nearest]) < 0.0) d.normal = -d.normal;
      t.normals[i] = d.normal;
      t.variations[i] = d.variation;
      degenerate[i] = d.degenerate;
    }
  });
  t.degenerate = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
  return t;
}

}  // namespace mf3d
