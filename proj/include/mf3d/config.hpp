#pragma once

// Run configuration: a JSON document with "encoder", "decoder", "train" and
// "paths" sections. Every field is optional; unknown keys and out-of-range
// values are rejected with the dotted path of the offending field.

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>
#include "mf3d/error.hpp"
#include "mf3d/loss.hpp"
#include "mf3d/model.hpp"

namespace mf3d {

using json = nlohmann::json;

struct AugmentFlags {
  bool rotation = true;
  bool scale = true;
  bool translation = false;
  bool full_so3 = false;  // rotation over SO(3) instead of about the z axis
};

enum class Precision { F32, F64 };

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double lr_encoder = 1e-3;
  double lr_decoder = 1e-4;
  double weight_decay = 1e-4;
  double mask_ratio = 0.6;
  std::size_t num_points = 2048;
  std::size_t num_patches = 128;
  std::size_t patch_size = 32;
  AugmentFlags augment;
  std::size_t warmup_epochs = 10;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  LossWeights loss_weights;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr_encoder > 0.0)) throw ConfigError("train.lr_encoder must be > 0");
    if (!(lr_decoder > 0.0)) throw ConfigError("train.lr_decoder must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
      throw ConfigError("train.mask_ratio must be in (0, 1), got " + std::to_string(mask_ratio));
    if (num_patches < 2) throw ConfigError("train.num_patches must be >= 2");
    if (patch_size < 1) throw ConfigError("train.patch_size must be >= 1");
    if (num_points < num_patches || num_points < patch_size)
      throw ConfigError("train.num_points must be >= train.num_patches and >= train.patch_size");
    if (!(loss_weights.normal >= 0.0 && loss_weights.variation >= 0.0))
      throw ConfigError("train.loss_weights must be nonnegative");
  }
};

struct PathsConfig {
  std::string cache_dir;
  std::string out_dir;
};

struct RunConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  PathsConfig paths;

  ModelConfig model() const { return {encoder, decoder}; }

  MaskingSettings masking() const {
    return {train.num_patches, train.patch_size, train.mask_ratio, decoder.query_ratio};
  }

  void validate() const {
    model().validate();
    train.validate();
  }
};

namespace detail {

/// Reads fields from one JSON object, remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <class U>
  void get(const char* key, U& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string field = (path_.empty() ? "" : path_ + ".") + key;
    if constexpr (std::is_same_v<U, bool>) {
      if (!v.is_boolean()) throw ConfigError(field + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<U>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(field + ": expected a nonnegative integer");
      out = v.get<U>();
    } else if constexpr (std::is_floating_point_v<U>) {
      if (!v.is_number()) throw ConfigError(field + ": expected a number");
      out = v.get<U>();
    } else {
      if (!v.is_string()) throw ConfigError(field + ": expected a string");
      out = v.get<std::string>();
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, (path_.empty() ? "" : path_ + ".") + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown key '" + (path_.empty() ? "" : path_ + ".") + it.key() + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void wrap_range(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const json& root) {
  RunConfig c;
  detail::ObjectReader top(root, "");

  auto enc = top.child("encoder");
  enc.get("d_model", c.encoder.d_model);
  enc.get("depth", c.encoder.depth);
  enc.get("heads", c.encoder.heads);
  enc.get("ffn_mult", c.encoder.ffn_mult);
  enc.get("patch_embed_hidden", c.encoder.patch_embed_hidden);
  enc.finish();

  auto dec = top.child("decoder");
  c.decoder.d_model = c.encoder.d_model;
  dec.get("blocks", c.decoder.blocks);
  dec.get("d_model", c.decoder.d_model);
  dec.get("heads", c.decoder.heads);
  dec.get("ffn_mult", c.decoder.ffn_mult);
  dec.get("query_ratio", c.decoder.query_ratio);
  std::string mode = to_string(c.decoder.attention_mode);
  dec.get("attention_mode", mode);
  c.decoder.attention_mode = parse_attention_mode(mode);
  dec.get("bounded_variation", c.decoder.bounded_variation);
  dec.finish();

  auto tr = top.child("train");
  tr.get("epochs", c.train.epochs);
  tr.get("batch_size", c.train.batch_size);
  tr.get("lr_encoder", c.train.lr_encoder);
  tr.get("lr_decoder", c.train.lr_decoder);
  tr.get("weight_decay", c.train.weight_decay);
  tr.get("mask_ratio", c.train.mask_ratio);
  tr.get("num_points", c.train.num_points);
  tr.get("num_patches", c.train.num_patches);
  tr.get("patch_size", c.train.patch_size);
  tr.get("warmup_epochs", c.train.warmup_epochs);
  tr.get("seed", c.train.seed);
  std::string precision = "f32";
  tr.get("precision", precision);
  if (precision == "f32")
    c.train.precision = Precision::F32;
  else if (precision == "f64")
    c.train.precision = Precision::F64;
  else
    throw ConfigError("train.precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
  auto aug = tr.child("augment");
  aug.get("rotation", c.train.augment.rotation);
  aug.get("scale", c.train.augment.scale);
  aug.get("translation", c.train.augment.translation);
  aug.get("full_so3", c.train.augment.full_so3);
  aug.finish();
  auto lw = tr.child("loss_weights");
  lw.get("normal", c.train.loss_weights.normal);
  lw.get("variation", c.train.loss_weights.variation);
  lw.finish();
  tr.finish();

  auto paths = top.child("paths");
  paths.get("cache_dir", c.paths.cache_dir);
  paths.get("out_dir", c.paths.out_dir);
  paths.finish();
  top.finish();

  detail::wrap_range([&] { c.validate(); });
  return c;
}

inline json to_json(const RunConfig& c) {
  return json{
      {"encoder",
       {{"d_model", c.encoder.d_model},
        {"depth", c.encoder.depth},
        {"heads", c.encoder.heads},
        {"ffn_mult", c.encoder.ffn_mult},
        {"patch_embed_hidden", c.encoder.patch_embed_hidden}}},
      {"decoder",
       {{"blocks", c.decoder.blocks},
        {"d_model", c.decoder.d_model},
        {"heads", c.decoder.heads},
        {"ffn_mult", c.decoder.ffn_mult},
        {"query_ratio", c.decoder.query_ratio},
        {"attention_mode", to_string(c.decoder.attention_mode)},
        {"bounded_variation", c.decoder.bounded_variation}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr_encoder", c.train.lr_encoder},
        {"lr_decoder", c.train.lr_decoder},
        {"weight_decay", c.train.weight_decay},
        {"mask_ratio", c.train.mask_ratio},
        {"num_points", c.train.num_points},
        {"num_patches", c.train.num_patches},
        {"patch_size", c.train.patch_size},
        {"warmup_epochs", c.train.warmup_epochs},
        {"seed", c.train.seed},
        {"precision", c.train.precision == Precision::F64 ? "f64" : "f32"},
        {"augment",
         {{"rotation", c.train.augment.rotation},
          {"scale", c.train.augment.scale},
          {"translation", c.train.augment.translation},
          {"full_so3", c.train.augment.full_so3}}},
        {"loss_weights", {{"normal", c.train.loss_weights.normal}, {"variation", c.train.loss_weights.variation}}}}},
      {"paths", {{"cache_dir", c.paths.cache_dir}, {"out_dir", c.paths.out_dir}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace mf3d
