#pragma once

// Parameter registry and the small set of layers the encoder/decoder share.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/rng.hpp"
#include "mf3d/tensor.hpp"

namespace mf3d {

/// Named trainable tensors in registration order. Names are dotted paths
/// ("encoder.blocks.0.attn.q.weight") and double as checkpoint keys.
template <class T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add(std::string name, Shape shape, std::vector<T> values) {
    for (const auto& e : entries_)
      if (e.first == name) throw Error("duplicate parameter name " + name);
    auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
    entries_.emplace_back(std::move(name), t);
    return t;
  }

  Tensor<T> uniform(std::string name, Shape shape, double bound, Rng& rng) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return add(std::move(name), std::move(shape), std::move(v));
  }

  Tensor<T> constant(std::string name, Shape shape, T value) {
    const std::size_t n = numel(shape);
    return add(std::move(name), std::move(shape), std::vector<T>(n, value));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return &e.second;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]; undefined when built without bias

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    weight = store.uniform(name + ".weight", {in, out}, bound, rng);
    if (with_bias) bias = store.constant(name + ".bias", {out}, T(0));
  }

  static std::size_t parameter_count(std::size_t in, std::size_t out, bool with_bias = true) {
    return in * out + (with_bias ? out : 0);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return bias.defined() ? add(matmul(x, weight), bias) : matmul(x, weight);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t d) {
    gain = store.constant(name + ".gain", {d}, T(1));
    bias = store.constant(name + ".bias", {d}, T(0));
  }

  static std::size_t parameter_count(std::size_t d) { return 2 * d; }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

/// in -> hidden -> out with GELU in between.
template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

  static std::size_t parameter_count(std::size_t in, std::size_t hidden, std::size_t out) {
    return Linear<T>::parameter_count(in, hidden) + Linear<T>::parameter_count(hidden, out);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

/// Multi-head scaled dot-product attention: queries from one token set,
/// keys and values from another (the same set for self-attention).
/// The q/k/v projections carry no bias; only the output projection does.
template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t d, std::size_t num_heads, Rng& rng)
      : q(store, name + ".q", d, d, rng, false),
        k(store, name + ".k", d, d, rng, false),
        v(store, name + ".v", d, d, rng, false),
        o(store, name + ".o", d, d, rng),
        heads(num_heads) {
    if (num_heads == 0 || d % num_heads != 0)
      throw ConfigError("d_model " + std::to_string(d) + " is not divisible by heads " + std::to_string(num_heads));
  }

  static std::size_t parameter_count(std::size_t d) {
    return 3 * Linear<T>::parameter_count(d, d, false) + Linear<T>::parameter_count(d, d);
  }

  /// queries [n, d], context [m, d] -> [n, d]
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& context) const {
    return o(attention(q(queries), k(context), v(context), heads));
  }
};

}  // namespace mf3d
