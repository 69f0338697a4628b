#pragma once

#include <string>

#include "mf3d/decoder.hpp"
#include "mf3d/tensor.hpp"

namespace mf3d {

struct LossWeights {
  double normal = 1.0;
  double variation = 1.0;
};

template <class T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> normal;     // mean over queries of ||n - n_hat||^2
  Tensor<T> variation;  // mean over queries of |v - v_hat|
};

/// lambda_n * mean ||n - n_hat||^2 + lambda_v * mean |v - v_hat| over the queries.
template <class T>
LossTerms<T> masked_feature_loss(const Prediction<T>& pred, const Tensor<T>& normals, const Tensor<T>& variations,
                                 const LossWeights& w = {}) {
  if (pred.normals.shape() != normals.shape() || pred.variations.shape() != variations.shape())
    throw ShapeError("loss: prediction shapes " + to_string(pred.normals.shape()) + "/" +
                     to_string(pred.variations.shape()) + " do not match targets " + to_string(normals.shape()) + "/" +
                     to_string(variations.shape()));
  if (!(w.normal >= 0.0 && w.variation >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  const T inv_q = T(1) / static_cast<T>(normals.dim(0));
  const auto dn = sub(normals, pred.normals);
  const auto dv = sub(variations, pred.variations);
  LossTerms<T> out;
  out.normal = scale(sum(mul(dn, dn)), inv_q);
  out.variation = scale(sum(abs(dv)), inv_q);
  out.total = add(scale(out.normal, static_cast<T>(w.normal)), scale(out.variation, static_cast<T>(w.variation)));
  return out;
}

}  // namespace mf3d
