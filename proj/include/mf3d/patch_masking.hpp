#pragma once

// Farthest-point patches and the masked / unmasked split.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/kdtree.hpp"
#include "mf3d/rng.hpp"
#include "mf3d/vec3.hpp"

namespace mf3d {

/// Greedy farthest point sampling starting from a given index. Each step takes
/// the point maximizing the distance to the chosen set, lowest index on ties.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count,
                                                      std::size_t first) {
  const std::size_t n = points.size();
  if (n == 0) throw InputError("farthest_point_sample: empty cloud");
  if (count > n)
    throw InputError("farthest_point_sample: requested " + std::to_string(count) + " samples from " +
                     std::to_string(n) + " points");
  if (first >= n) throw InputError("farthest_point_sample: first index out of range");
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  if (count == 0) return chosen;
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::size_t current = first;
  for (std::size_t s = 0; s < count; ++s) {
    chosen.push_back(current);
    mind[current] = -1.0;
    std::size_t best = n;
    double best_d = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (mind[i] < 0.0) continue;
      const double d = squared_distance(points[i], points[current]);
      if (d < mind[i]) mind[i] = d;
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

/// FPS with the first index drawn uniformly from the generator.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count, Rng& rng) {
  if (points.empty()) throw InputError("farthest_point_sample: empty cloud");
  const auto first = static_cast<std::size_t>(rng.index(points.size()));
  return farthest_point_sample(points, count, first);
}

struct PatchSet {
  std::vector<Vec3> centers;
  std::vector<std::size_t> center_indices;
  std::vector<std::vector<std::size_t>> membership;  // k nearest points per center, nearest first

  std::size_t size() const { return centers.size(); }
};

/// The k nearest points (ties by index) to each of the given centers.
inline PatchSet patches_from_centers(std::span<const Vec3> points, std::vector<std::size_t> center_indices,
                                     std::size_t k) {
  if (k == 0 || k > points.size())
    throw InputError("patch size k=" + std::to_string(k) + " must be in [1, " + std::to_string(points.size()) + "]");
  PatchSet ps;
  ps.center_indices = std::move(center_indices);
  const KdTree tree(std::vector<Vec3>(points.begin(), points.end()));
  for (std::size_t c : ps.center_indices) {
    ps.centers.push_back(points[c]);
    std::vector<std::size_t> members;
    members.reserve(k);
    for (const auto& nb : tree.knn(points[c], k)) members.push_back(nb.index);
    ps.membership.push_back(std::move(members));
  }
  return ps;
}

inline PatchSet build_patches(std::span<const Vec3> points, std::size_t num_patches, std::size_t k, Rng& rng) {
  if (num_patches == 0) throw InputError("build_patches: need at least one patch");
  if (k == 0 || k > points.size())
    throw InputError("patch size k=" + std::to_string(k) + " must be in [1, " + std::to_string(points.size()) + "]");
  return patches_from_centers(points, farthest_point_sample(points, num_patches, rng), k);
}

inline PatchSet build_patches(std::span<const Vec3> points, std::size_t num_patches, std::size_t k,
                              std::uint64_t seed) {
  Rng rng(seed);
  return build_patches(points, num_patches, k, rng);
}

/// M = min(ceil(ratio * K), K - 1). A 1e-9 slack absorbs the representation
/// error of decimal ratios so that, e.g., 0.07 * 100 yields 7 rather than 8.
inline std::size_t mask_count(std::size_t num_patches, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("mask ratio must be in (0, 1)");
  if (num_patches == 0) return 0;
  const double x = ratio * static_cast<double>(num_patches);
  auto m = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::min(m, num_patches - 1);
}

struct MaskSplit {
  std::vector<std::size_t> masked_patch_ids;  // ascending
  std::vector<std::size_t> masked_points;     // P_M, ascending
  std::vector<std::size_t> unmasked_points;   // P_U, ascending
  std::vector<char> is_masked;                // per cloud point

  /// Patch ids not in masked_patch_ids, ascending.
  std::vector<std::size_t> unmasked_patch_ids(std::size_t num_patches) const {
    std::vector<std::size_t> out;
    std::size_t j = 0;
    for (std::size_t i = 0; i < num_patches; ++i) {
      if (j < masked_patch_ids.size() && masked_patch_ids[j] == i)
        ++j;
      else
        out.push_back(i);
    }
    return out;
  }
};

/// Split from an explicit set of masked patches. A point in any masked patch is
/// masked, even if it also belongs to an unmasked patch.
inline MaskSplit split_from_masked_patches(const PatchSet& patches, std::size_t num_points,
                                           std::vector<std::size_t> masked_patch_ids) {
  std::sort(masked_patch_ids.begin(), masked_patch_ids.end());
  MaskSplit s;
  s.masked_patch_ids = std::move(masked_patch_ids);
  s.is_masked.assign(num_points, 0);
  for (std::size_t pid : s.masked_patch_ids) {
    if (pid >= patches.size()) throw InputError("masked patch id out of range");
    for (std::size_t idx : patches.membership[pid]) s.is_masked.at(idx) = 1;
  }
  for (std::size_t i = 0; i < num_points; ++i) (s.is_masked[i] ? s.masked_points : s.unmasked_points).push_back(i);
  return s;
}

inline MaskSplit select_mask(const PatchSet& patches, std::size_t num_points, double ratio, Rng& rng) {
  const std::size_t m = mask_count(patches.size(), ratio);
  return split_from_masked_patches(patches, num_points, sample_without_replacement(rng, patches.size(), m));
}

inline MaskSplit select_mask(const PatchSet& patches, std::size_t num_points, double ratio, std::uint64_t seed) {
  Rng rng(seed);
  return select_mask(patches, num_points, ratio, rng);
}

}  // namespace mf3d
