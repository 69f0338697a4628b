#pragma once

// Encoder + decoder wired into one masked-feature forward pass.

#include <cstdint>
#include <vector>

#include "mf3d/decoder.hpp"
#include "mf3d/encoder.hpp"
#include "mf3d/loss.hpp"
#include "mf3d/patch_masking.hpp"
#include "mf3d/pointcloud.hpp"

namespace mf3d {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (decoder.d_model != encoder.d_model)
      throw ConfigError("decoder.d_model (" + std::to_string(decoder.d_model) + ") must equal encoder.d_model (" +
                        std::to_string(encoder.d_model) + ")");
  }
};

template <class T>
class MaskFeatModel {
 public:
  MaskFeatModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    Rng enc_rng = rng.fork();
    Rng dec_rng = rng.fork();
    encoder_ = Encoder<T>(params_, cfg.encoder, enc_rng);
    decoder_ = Decoder<T>(params_, cfg.decoder, dec_rng);
  }

  MaskFeatModel(const MaskFeatModel&) = delete;
  MaskFeatModel& operator=(const MaskFeatModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

struct MaskingSettings {
  std::size_t num_patches = 128;
  std::size_t patch_size = 32;
  double mask_ratio = 0.6;
  double query_ratio = 1.0;
};

/// Patches, mask and decoder queries for one training sample.
struct MaskingPlan {
  PatchSet patches;
  MaskSplit split;
  std::vector<std::size_t> queries;
};

inline MaskingPlan plan_masking(std::span<const Vec3> points, const MaskingSettings& s, Rng& rng) {
  MaskingPlan plan;
  plan.patches = build_patches(points, s.num_patches, s.patch_size, rng);
  plan.split = select_mask(plan.patches, points.size(), s.mask_ratio, rng);
  plan.queries = select_queries(plan.split.masked_points, s.query_ratio, rng);
  return plan;
}

template <class T>
struct ForwardOutput {
  Prediction<T> prediction;
  LossTerms<T> loss;
  std::size_t blocks = 0;
};

/// Encoder sees only visible patch points; decoder sees only query coordinates.
template <class T>
ForwardOutput<T> forward_masked(const MaskFeatModel<T>& model, const PointCloud& sample, const MaskingPlan& plan,
                                const LossWeights& weights = {}, AccessLog* log = nullptr) {
  if (!sample.has_normals() || !sample.has_variations()) throw InputError("training sample lacks target features");
  const PatchInput visible = gather_visible_patches(sample.points, plan.patches, plan.split, log);
  const BlockFeatures<T> blocks = model.encoder().encode(visible);

  std::vector<Vec3> query_pts;
  std::vector<T> tn, tv;
  query_pts.reserve(plan.queries.size());
  for (std::size_t q : plan.queries) {
    if (!plan.split.is_masked.at(q)) throw InputError("query index is not a masked point");
    query_pts.push_back(sample.points[q]);
    for (double c : sample.normals[q]) tn.push_back(static_cast<T>(c));
    tv.push_back(static_cast<T>(sample.variations[q]));
  }
  if (log) log->decoder_queries = plan.queries;

  ForwardOutput<T> out;
  out.prediction = model.decoder().decode(blocks, query_pts);
  out.loss = masked_feature_loss(out.prediction, Tensor<T>::from({query_pts.size(), 3}, std::move(tn)),
                                 Tensor<T>::from({query_pts.size(), 1}, std::move(tv)), weights);
  out.blocks = blocks.size();
  return out;
}

}  // namespace mf3d
