#pragma once

// Checkpoint file layout (little-endian):
//   char[8] "MF3DCKPT" | u32 version | u32 json_len | json (config + state) |
//   u32 n_blobs | n_blobs x { u32 name_len | name | u8 dtype | u32 ndim |
//                            u32 dims[ndim] | data }
// dtype 0 = f32, 1 = f64. Optimizer moments are stored as "optim.m.<param>"
// and "optim.v.<param>".

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mf3d/config.hpp"
#include "mf3d/io.hpp"
#include "mf3d/model.hpp"
#include "mf3d/optim.hpp"

namespace mf3d {

inline constexpr char kCheckpointMagic[8] = {'M', 'F', '3', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class BlobType : std::uint8_t { F32 = 0, F64 = 1 };

struct Blob {
  std::string name;
  BlobType dtype = BlobType::F32;
  Shape shape;
  std::vector<double> data;

  friend bool operator==(const Blob&, const Blob&) = default;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t global_step = 0;
  std::uint64_t adam_step = 0;
  Rng::State rng{};

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  RunConfig config;
  TrainState state;
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return &b;
    return nullptr;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, ck.version);
  json meta{{"config", to_json(ck.config)},
            {"state",
             {{"epoch", ck.state.epoch},
              {"global_step", ck.state.global_step},
              {"adam_step", ck.state.adam_step},
              {"rng", ck.state.rng}}}};
  const std::string text = meta.dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    if (numel(b.shape) != b.data.size()) throw ShapeError("blob " + b.name + " shape disagrees with its data");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(b.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : b.data) {
      if (b.dtype == BlobType::F32)
        detail::put_le<float>(out, static_cast<float>(x));
      else
        detail::put_le<double>(out, x);
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>") {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < sizeof kCheckpointMagic || bytes.substr(0, sizeof kCheckpointMagic) !=
                                                    std::string_view(kCheckpointMagic, sizeof kCheckpointMagic))
    throw FormatError(source + ": not a checkpoint (bad magic)");
  r.bytes(sizeof kCheckpointMagic);
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion)
    throw UnsupportedVersionError(source + ": unsupported checkpoint version " + std::to_string(ck.version));
  const auto json_len = r.get<std::uint32_t>();
  try {
    const json meta = json::parse(r.bytes(json_len));
    ck.config = parse_run_config(meta.at("config"));
    const json& st = meta.at("state");
    ck.state.epoch = st.at("epoch").get<std::size_t>();
    ck.state.global_step = st.at("global_step").get<std::uint64_t>();
    ck.state.adam_step = st.at("adam_step").get<std::uint64_t>();
    ck.state.rng = st.at("rng").get<Rng::State>();
  } catch (const json::exception& e) {
    throw FormatError(source + ": malformed checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(source + ": invalid config in checkpoint: " + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  ck.blobs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Blob b;
    b.name = std::string(r.bytes(r.get<std::uint32_t>()));
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw FormatError(source + ": blob " + b.name + " has unknown dtype " + std::to_string(dt));
    b.dtype = static_cast<BlobType>(dt);
    const auto ndim = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) b.shape.push_back(r.get<std::uint32_t>());
    const std::size_t count = numel(b.shape);
    const std::size_t width = b.dtype == BlobType::F32 ? 4 : 8;
    if (count > r.remaining() / width) throw FormatError(source + ": truncated file");
    b.data.resize(count);
    for (auto& x : b.data) x = b.dtype == BlobType::F32 ? r.get<float>() : r.get<double>();
    ck.blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after checkpoint");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

template <class T>
constexpr BlobType blob_type() {
  return sizeof(T) == 8 ? BlobType::F64 : BlobType::F32;
}

template <class T>
Blob make_blob(std::string name, Shape shape, std::span<const T> values) {
  return Blob{std::move(name), blob_type<T>(), std::move(shape), std::vector<double>(values.begin(), values.end())};
}

template <class T>
void copy_blob(const Blob& b, const Shape& shape, std::span<T> out) {
  if (b.shape != shape)
    throw FormatError("checkpoint blob " + b.name + " has shape " + to_string(b.shape) + ", model expects " +
                      to_string(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(b.data[i]);
}

template <class T>
Checkpoint make_checkpoint(const RunConfig& cfg, const TrainState& state, const ParameterStore<T>& params,
                           const AdamW<T>* optim) {
  Checkpoint ck;
  ck.config = cfg;
  ck.state = state;
  for (const auto& [name, t] : params.entries()) ck.blobs.push_back(make_blob<T>(name, t.shape(), t.values()));
  if (optim) {
    const auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i)
      ck.blobs.push_back(
          make_blob<T>("optim.m." + entries[i].first, entries[i].second.shape(), optim->first_moments()[i]));
    for (std::size_t i = 0; i < entries.size(); ++i)
      ck.blobs.push_back(
          make_blob<T>("optim.v." + entries[i].first, entries[i].second.shape(), optim->second_moments()[i]));
  }
  return ck;
}

/// Copies parameters (and, when `optim` is given, moments and step count) from a checkpoint.
template <class T>
void restore_checkpoint(const Checkpoint& ck, ParameterStore<T>& params, AdamW<T>* optim) {
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, t] = entries[i];
    const Blob* b = ck.find(name);
    if (!b) throw FormatError("checkpoint lacks parameter " + name);
    copy_blob<T>(*b, t.shape(), t.mutable_values());
    if (optim) {
      const Blob* m = ck.find("optim.m." + name);
      const Blob* v = ck.find("optim.v." + name);
      if (!m || !v) throw FormatError("checkpoint lacks optimizer moments for " + name);
      copy_blob<T>(*m, t.shape(), std::span<T>(optim->first_moments()[i]));
      copy_blob<T>(*v, t.shape(), std::span<T>(optim->second_moments()[i]));
    }
  }
  if (optim) optim->set_step_count(ck.state.adam_step);
}

/// Rebuilds the model stored in a checkpoint. If `expected` is given its model
/// shape must agree with the checkpoint's.
template <class T>
std::unique_ptr<MaskFeatModel<T>> load_model(const Checkpoint& ck, const ModelConfig* expected = nullptr) {
  const ModelConfig mc = ck.config.model();
  if (expected) {
    if (expected->encoder.d_model != mc.encoder.d_model || expected->decoder.d_model != mc.decoder.d_model)
      throw ConfigError("config d_model " + std::to_string(expected->encoder.d_model) +
                        " does not match checkpoint d_model " + std::to_string(mc.encoder.d_model));
    if (expected->encoder.depth != mc.encoder.depth || expected->encoder.heads != mc.encoder.heads ||
        expected->encoder.ffn_mult != mc.encoder.ffn_mult ||
        expected->encoder.patch_embed_hidden != mc.encoder.patch_embed_hidden)
      throw ConfigError("config encoder shape does not match checkpoint");
  }
  auto model = std::make_unique<MaskFeatModel<T>>(mc, 0);
  restore_checkpoint<T>(ck, model->parameters(), nullptr);
  return model;
}

}  // namespace mf3d
