#pragma once

// Downstream use of a pretrained encoder: block features of an unmasked
// cloud, a mean-pooled shape vector, and a nearest-neighbor probe.

#include <algorithm>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "mf3d/io.hpp"
#include "mf3d/model.hpp"

namespace mf3d {

struct ShapeFeatures {
  std::vector<BlockFeaturePair> blocks;
  std::vector<double> pooled;  // mean of the block features
};

template <class T>
ShapeFeatures extract_features(const MaskFeatModel<T>& model, std::span<const Vec3> points, std::size_t num_patches,
                               std::size_t patch_size, std::uint64_t seed) {
  NoGradGuard no_grad;
  const PatchSet patches = build_patches(points, num_patches, patch_size, seed);
  const BlockFeatures<T> bf = model.encoder().encode(gather_all_patches(points, patches));
  ShapeFeatures out;
  out.blocks = bf.pairs();
  const std::size_t d = bf.features.dim(-1);
  out.pooled.assign(d, 0.0);
  for (const auto& b : out.blocks)
    for (std::size_t j = 0; j < d; ++j) out.pooled[j] += b.feature[j];
  for (auto& x : out.pooled) x /= static_cast<double>(out.blocks.size());
  return out;
}

/// One "block" line per patch (centroid then feature) and a final "pooled" line.
inline void write_features(std::ostream& out, const ShapeFeatures& f) {
  out.precision(9);
  for (const auto& b : f.blocks) {
    out << "block " << b.centroid[0] << ' ' << b.centroid[1] << ' ' << b.centroid[2];
    for (double x : b.feature) out << ' ' << x;
    out << '\n';
  }
  out << "pooled";
  for (double x : f.pooled) out << ' ' << x;
  out << '\n';
}

inline bool is_cloud_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".xyz" || ext == ".off" || ext == ".obj" || ext == ".mf3d";
}

/// Reads .xyz, .off/.obj (surface-sampled) or .mf3d, keeps at most `n` points
/// and normalizes the result into the unit sphere.
inline PointCloud load_input_cloud(const std::filesystem::path& path, std::size_t n, std::uint64_t seed) {
  const auto ext = path.extension().string();
  Rng rng(seed);
  PointCloud cloud;
  if (ext == ".xyz")
    cloud = parse_xyz(path);
  else if (ext == ".off" || ext == ".obj")
    cloud = sample_surface(parse_mesh(path), n, rng);
  else if (ext == ".mf3d")
    cloud = to_point_cloud(read_cache(path));
  else
    throw UnsupportedFormatError(path.string() + ": unsupported cloud extension '" + ext + "'");
  PointCloud out;
  if (cloud.size() > n) {
    for (std::size_t i : sample_without_replacement(rng, cloud.size(), n)) out.points.push_back(cloud.points[i]);
  } else {
    out.points = std::move(cloud.points);
  }
  validate(out);
  normalize_unit_sphere(out);
  return out;
}

struct LabeledFile {
  std::filesystem::path path;
  std::string label;
};

/// Files grouped as <dir>/<label>/<file>; sorted by label then name.
inline std::vector<LabeledFile> list_labeled(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError(dir.string() + " is not a directory");
  std::vector<LabeledFile> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_cloud_file(e.path()))
      throw InputError(dir.string() + ": expected one subdirectory per class, found loose file " +
                       e.path().filename().string());
    if (!e.is_directory()) continue;
    for (const auto& f : std::filesystem::directory_iterator(e.path()))
      if (f.is_regular_file() && is_cloud_file(f.path())) out.push_back({f.path(), e.path().filename().string()});
  }
  if (out.empty()) throw InputError(dir.string() + ": no labeled clouds (expected <dir>/<class>/<file>)");
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.label != b.label ? a.label < b.label : a.path < b.path;
  });
  return out;
}

/// 1-nearest-neighbor accuracy under Euclidean distance; ties go to the lower train index.
inline double nearest_neighbor_accuracy(const std::vector<std::vector<double>>& train,
                                        const std::vector<std::string>& train_labels,
                                        const std::vector<std::vector<double>>& test,
                                        const std::vector<std::string>& test_labels) {
  if (train.empty() || test.empty()) throw InputError("probe needs nonempty train and test sets");
  if (train.size() != train_labels.size() || test.size() != test_labels.size())
    throw InputError("probe: feature and label counts differ");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < train.size(); ++j) {
      if (train[j].size() != test[i].size()) throw ShapeError("probe: feature widths differ");
      double d = 0.0;
      for (std::size_t c = 0; c < test[i].size(); ++c) d += (test[i][c] - train[j][c]) * (test[i][c] - train[j][c]);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    correct += train_labels[arg] == test_labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace mf3d
