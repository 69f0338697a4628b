#pragma once

// Attention decoder: masked points act as queries. Each block runs
// self-attention among the queries, then cross-attention into the encoder's
// block features (keyed by centroid embeddings), then a feed-forward layer.
// A shared MLP head maps every query token to (normal, variation).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mf3d/encoder.hpp"
#include "mf3d/nn.hpp"

namespace mf3d {

enum class AttentionMode { SelfCross, CrossOnly };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::SelfCross ? "self+cross" : "cross-only"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "self+cross") return AttentionMode::SelfCross;
  if (s == "cross-only") return AttentionMode::CrossOnly;
  throw ConfigError("decoder.attention_mode must be \"self+cross\" or \"cross-only\", got \"" + s + "\"");
}

struct DecoderConfig {
  static constexpr std::size_t out_dim = 4;  // normal (3) + variation (1)

  std::size_t blocks = 4;
  std::size_t d_model = 96;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  double query_ratio = 1.0;
  AttentionMode attention_mode = AttentionMode::SelfCross;
  /// Squash the variation output into [0, 1/3] with a scaled sigmoid.
  bool bounded_variation = true;

  void validate() const {
    if (blocks < 1) throw ConfigError("decoder.blocks must be >= 1");
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
      throw ConfigError("decoder.d_model must be a positive multiple of decoder.heads");
    if (ffn_mult < 1) throw ConfigError("decoder.ffn_mult must be >= 1");
    if (!(query_ratio > 0.0 && query_ratio <= 1.0)) throw ConfigError("decoder.query_ratio must be in (0, 1]");
  }
};

/// Raw predictions at the queries; the loss consumes them unnormalized.
template <class T>
struct Prediction {
  Tensor<T> normals;     // [Q, 3]
  Tensor<T> variations;  // [Q, 1]

  std::size_t size() const { return normals.dim(0); }

  /// Row-normalized copy of the normal predictions.
  std::vector<Vec3> unit_normals() const {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < size(); ++i)
      out.push_back(normalized(Vec3{static_cast<double>(normals[3 * i]), static_cast<double>(normals[3 * i + 1]),
                                    static_cast<double>(normals[3 * i + 2])}));
    return out;
  }
};

/// ceil(ratio * |masked|) masked indices drawn uniformly without replacement,
/// ascending. ratio 1 returns the whole set unchanged.
inline std::vector<std::size_t> select_queries(const std::vector<std::size_t>& masked, double ratio, Rng& rng) {
  if (masked.empty()) throw InputError("select_queries: no masked points");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InputError("select_queries: ratio must be in (0, 1]");
  if (ratio == 1.0) return masked;
  const auto q = std::min(masked.size(),
                          static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(masked.size()) - 1e-9)));
  std::vector<std::size_t> picked;
  for (std::size_t i : sample_without_replacement(rng, masked.size(), std::max<std::size_t>(1, q)))
    picked.push_back(masked[i]);
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline std::vector<std::size_t> select_queries(const std::vector<std::size_t>& masked, double ratio,
                                               std::uint64_t seed) {
  Rng rng(seed);
  return select_queries(masked, ratio, rng);
}

template <class T>
struct DecoderBlock {
  bool with_self = true;
  LayerNorm<T> self_norm, cross_norm, ffn_norm;
  MultiHeadAttention<T> self_attn, cross_attn;
  Mlp<T> ffn;

  DecoderBlock() = default;
  DecoderBlock(ParameterStore<T>& store, const std::string& name, const DecoderConfig& c, Rng& rng)
      : with_self(c.attention_mode == AttentionMode::SelfCross) {
    if (with_self) {
      self_norm = LayerNorm<T>(store, name + ".self_norm", c.d_model);
      self_attn = MultiHeadAttention<T>(store, name + ".self_attn", c.d_model, c.heads, rng);
    }
    cross_norm = LayerNorm<T>(store, name + ".cross_norm", c.d_model);
    cross_attn = MultiHeadAttention<T>(store, name + ".cross_attn", c.d_model, c.heads, rng);
    ffn_norm = LayerNorm<T>(store, name + ".ffn_norm", c.d_model);
    ffn = Mlp<T>(store, name + ".ffn", c.d_model, c.ffn_mult * c.d_model, c.d_model, rng);
  }

  static std::size_t parameter_count(const DecoderConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t attn = LayerNorm<T>::parameter_count(d) + MultiHeadAttention<T>::parameter_count(d);
    return (c.attention_mode == AttentionMode::SelfCross ? 2 : 1) * attn + LayerNorm<T>::parameter_count(d) +
           Mlp<T>::parameter_count(d, c.ffn_mult * d, d);
  }

  /// queries [Q, d], keys_values [B, d]
  Tensor<T> operator()(Tensor<T> x, const Tensor<T>& keys_values) const {
    if (with_self) {
      const auto h = self_norm(x);
      x = add(x, self_attn(h, h));
    }
    x = add(x, cross_attn(cross_norm(x), keys_values));
    return add(x, ffn(ffn_norm(x)));
  }
};

template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore<T>& store, const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    pos_mlp_ = Mlp<T>(store, "decoder.pos_embed", 3, cfg.d_model, cfg.d_model, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i)
      blocks_.emplace_back(store, "decoder.blocks." + std::to_string(i), cfg, rng);
    norm_ = LayerNorm<T>(store, "decoder.norm", cfg.d_model);
    head_ = Mlp<T>(store, "decoder.head", cfg.d_model, cfg.d_model, DecoderConfig::out_dim, rng);
  }

  const DecoderConfig& config() const { return cfg_; }

  Tensor<T> positional_embed(std::span<const Vec3> pts) const { return pos_mlp_(points_tensor<T>(pts)); }

  /// Predicts target features at the query coordinates from the block features.
  Prediction<T> decode(const BlockFeatures<T>& blocks, std::span<const Vec3> queries) const {
    if (blocks.size() == 0) throw InputError("decode: no block features");
    if (queries.empty()) throw InputError("decode: no queries");
    if (blocks.features.rank() != 2 || blocks.features.dim(-1) != cfg_.d_model)
      throw ShapeError("decode: block feature width " + std::to_string(blocks.features.dim(-1)) +
                       " does not match decoder d_model " + std::to_string(cfg_.d_model));
    const Tensor<T> keys_values = add(blocks.features, positional_embed(blocks.centroids));
    Tensor<T> x = positional_embed(queries);
    for (const auto& b : blocks_) x = b(x, keys_values);
    const Tensor<T> out = head_(norm_(x));
    Prediction<T> p;
    p.normals = slice_lastdim(out, 0, 3);
    const auto raw_var = slice_lastdim(out, 3, 1);
    p.variations = cfg_.bounded_variation ? scale(sigmoid(raw_var), static_cast<T>(1.0 / 3.0)) : raw_var;
    return p;
  }

 private:
  DecoderConfig cfg_;
  Mlp<T> pos_mlp_;
  std::vector<DecoderBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Mlp<T> head_;
};

/// Exact trainable scalar count of a decoder built from this config.
inline std::size_t count_parameters(const DecoderConfig& c) {
  using T = float;
  return Mlp<T>::parameter_count(3, c.d_model, c.d_model) + c.blocks * DecoderBlock<T>::parameter_count(c) +
         LayerNorm<T>::parameter_count(c.d_model) + Mlp<T>::parameter_count(c.d_model, c.d_model, DecoderConfig::out_dim);
}

inline std::size_t count_parameters(const EncoderConfig& c) { return Encoder<float>::parameter_count(c); }

}  // namespace mf3d
