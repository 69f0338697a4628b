#pragma once

// ViT-style point encoder: mini-PointNet patch embedding, learned positional
// embedding of patch centroids, pre-norm transformer. Emits one block feature
// pair (feature, centroid) per visible patch.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/nn.hpp"
#include "mf3d/patch_masking.hpp"
#include "mf3d/vec3.hpp"

namespace mf3d {

struct EncoderConfig {
  std::size_t d_model = 96;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t patch_embed_hidden = 64;

  static EncoderConfig paper_scale() { return {384, 12, 6, 4, 128}; }

  void validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
      throw ConfigError("encoder.d_model must be a positive multiple of encoder.heads");
    if (depth < 1) throw ConfigError("encoder.depth must be >= 1");
    if (ffn_mult < 1) throw ConfigError("encoder.ffn_mult must be >= 1");
    if (patch_embed_hidden < 1) throw ConfigError("encoder.patch_embed_hidden must be >= 1");
  }
};

struct BlockFeaturePair {
  std::vector<double> feature;
  Vec3 centroid;
};

/// Encoder output: row i of `features` belongs to centroids[i].
template <class T>
struct BlockFeatures {
  Tensor<T> features;  // [B, d_model]
  std::vector<Vec3> centroids;
  std::vector<std::size_t> patch_ids;

  std::size_t size() const { return centroids.size(); }

  std::vector<BlockFeaturePair> pairs() const {
    std::vector<BlockFeaturePair> out;
    const std::size_t d = features.dim(-1);
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      BlockFeaturePair p;
      p.centroid = centroids[i];
      for (std::size_t j = 0; j < d; ++j) p.feature.push_back(static_cast<double>(features[i * d + j]));
      out.push_back(std::move(p));
    }
    return out;
  }
};

/// Which cloud indices each network stage read. Filled only when requested.
struct AccessLog {
  std::vector<std::size_t> encoder_points;
  std::vector<std::size_t> decoder_queries;
};

/// Patch points ready for embedding: centered on their centroid, concatenated,
/// with segment offsets.
struct PatchInput {
  std::vector<Vec3> centered;
  std::vector<std::size_t> offsets{0};
  std::vector<Vec3> centroids;
  std::vector<std::size_t> patch_ids;

  std::size_t size() const { return centroids.size(); }
};

/// Mean of the points, summed in lexicographic order so the result does not
/// depend on input order.
inline Vec3 stable_centroid(std::vector<Vec3> pts) {
  std::sort(pts.begin(), pts.end());
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : pts) c = c + p;
  return (1.0 / static_cast<double>(pts.size())) * c;
}

inline void append_patch(PatchInput& in, std::vector<Vec3> pts, std::size_t patch_id) {
  const Vec3 c = stable_centroid(pts);
  for (const auto& p : pts) in.centered.push_back(p - c);
  in.offsets.push_back(in.centered.size());
  in.centroids.push_back(c);
  in.patch_ids.push_back(patch_id);
}

/// Visible part of every unmasked patch: members that are not masked. Patches
/// left with no visible point are dropped. Only visible indices are read.
inline PatchInput gather_visible_patches(std::span<const Vec3> cloud, const PatchSet& patches, const MaskSplit& split,
                                         AccessLog* log = nullptr) {
  PatchInput in;
  std::vector<char> touched(log ? cloud.size() : 0, 0);
  for (std::size_t pid : split.unmasked_patch_ids(patches.size())) {
    std::vector<Vec3> pts;
    for (std::size_t idx : patches.membership[pid]) {
      if (split.is_masked[idx]) continue;
      pts.push_back(cloud[idx]);
      if (log) touched[idx] = 1;
    }
    if (!pts.empty()) append_patch(in, std::move(pts), pid);
  }
  if (log)
    for (std::size_t i = 0; i < touched.size(); ++i)
      if (touched[i]) log->encoder_points.push_back(i);
  if (in.size() == 0) throw InputError("no visible patch survives masking");
  return in;
}

/// Every patch in full (feature extraction on an unmasked cloud).
inline PatchInput gather_all_patches(std::span<const Vec3> cloud, const PatchSet& patches) {
  PatchInput in;
  for (std::size_t pid = 0; pid < patches.size(); ++pid) {
    std::vector<Vec3> pts;
    for (std::size_t idx : patches.membership[pid]) pts.push_back(cloud[idx]);
    append_patch(in, std::move(pts), pid);
  }
  return in;
}

template <class T>
Tensor<T> points_tensor(std::span<const Vec3> pts) {
  std::vector<T> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts)
    for (double x : p) v.push_back(static_cast<T>(x));
  return Tensor<T>::from({pts.size(), 3}, std::move(v));
}

/// x + attn(norm(x)) then x + ffn(norm(x)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1, norm2;
  MultiHeadAttention<T> attn;
  Mlp<T> ffn;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore<T>& store, const std::string& name, std::size_t d, std::size_t heads,
                   std::size_t ffn_mult, Rng& rng)
      : norm1(store, name + ".norm1", d),
        norm2(store, name + ".norm2", d),
        attn(store, name + ".attn", d, heads, rng),
        ffn(store, name + ".ffn", d, ffn_mult * d, d, rng) {}

  static std::size_t parameter_count(std::size_t d, std::size_t ffn_mult) {
    return 2 * LayerNorm<T>::parameter_count(d) + MultiHeadAttention<T>::parameter_count(d) +
           Mlp<T>::parameter_count(d, ffn_mult * d, d);
  }

  Tensor<T> operator()(Tensor<T> x) const {
    const auto h = norm1(x);
    x = add(x, attn(h, h));
    return add(x, ffn(norm2(x)));
  }
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore<T>& store, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    patch_mlp_ = Mlp<T>(store, "encoder.patch_embed", 3, cfg.patch_embed_hidden, cfg.d_model, rng);
    pos_mlp_ = Mlp<T>(store, "encoder.pos_embed", 3, cfg.d_model, cfg.d_model, rng);
    for (std::size_t i = 0; i < cfg.depth; ++i)
      blocks_.emplace_back(store, "encoder.blocks." + std::to_string(i), cfg.d_model, cfg.heads, cfg.ffn_mult, rng);
    norm_ = LayerNorm<T>(store, "encoder.norm", cfg.d_model);
  }

  const EncoderConfig& config() const { return cfg_; }

  static std::size_t parameter_count(const EncoderConfig& c) {
    return Mlp<T>::parameter_count(3, c.patch_embed_hidden, c.d_model) +
           Mlp<T>::parameter_count(3, c.d_model, c.d_model) +
           c.depth * TransformerBlock<T>::parameter_count(c.d_model, c.ffn_mult) + LayerNorm<T>::parameter_count(c.d_model);
  }

  /// Shared per-point MLP then max pooling, per patch: [S, d_model].
  Tensor<T> embed_patches(const PatchInput& in) const {
    return segment_max_rows(patch_mlp_(points_tensor<T>(in.centered)), in.offsets);
  }

  /// One patch (k x 3, uncentered) to a d_model vector.
  Tensor<T> embed_patch(std::span<const Vec3> points) const {
    if (points.empty()) throw InputError("embed_patch: empty patch");
    PatchInput in;
    append_patch(in, std::vector<Vec3>(points.begin(), points.end()), 0);
    return reshape(embed_patches(in), {cfg_.d_model});
  }

  /// [n, 3] coordinates to [n, d_model].
  Tensor<T> positional_embed(std::span<const Vec3> pts) const { return pos_mlp_(points_tensor<T>(pts)); }

  BlockFeatures<T> encode(const PatchInput& in) const {
    if (in.size() == 0) throw InputError("encode: no patches");
    Tensor<T> x = add(embed_patches(in), positional_embed(in.centroids));
    for (const auto& b : blocks_) x = b(x);
    return {norm_(x), in.centroids, in.patch_ids};
  }

 private:
  EncoderConfig cfg_;
  Mlp<T> patch_mlp_, pos_mlp_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
};

}  // namespace mf3d
