#pragma once

// Central-difference gradient checks for single ops and for the whole model.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mf3d/model.hpp"
#include "mf3d/rng.hpp"
#include "mf3d/tensor.hpp"

namespace mf3d {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Max relative error between backward() and central differences over every
/// element of every input. Inputs are perturbed in place and restored.
inline double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps = 1e-5) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  backward(f(inputs));
  double worst = 0.0;
  for (auto& x : inputs) {
    const std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                      : std::vector<double>(x.numel(), 0.0);
    auto vals = x.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      NoGradGuard guard;
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double fp = f(inputs).item();
      vals[i] = saved - eps;
      const double fm = f(inputs).item();
      vals[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
  }
  return worst;
}

inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                         double eps = 1e-5) {
  return grad_check([&](const std::vector<Tensor<double>>& in) { return f(in[0]); }, {std::move(x)}, eps);
}

struct OpCheck {
  std::string name;
  double error = 0.0;
};

struct GradReport {
  double max_error = 0.0;
  std::string worst;  // op or parameter name
  std::vector<OpCheck> entries;
};

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Values bounded away from zero (for kinks at the origin).
inline Tensor<double> away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Distinct, well-separated values in random order (so max has a clear winner).
inline Tensor<double> distinct(Rng& rng, Shape shape) {
  const std::size_t n = numel(shape);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(rng, order);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.1 * static_cast<double>(order[i]) - 0.05 * static_cast<double>(n);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

inline GradReport summarize(std::vector<OpCheck> entries) {
  GradReport r;
  for (const auto& e : entries)
    if (r.worst.empty() || e.error > r.max_error) {
      r.max_error = e.error;
      r.worst = e.name;
    }
  r.entries = std::move(entries);
  return r;
}

}  // namespace detail

/// Every differentiable op on randomized shapes, including each broadcast form.
inline GradReport op_gradcheck_suite(std::uint64_t seed = 7, double eps = 1e-5) {
  using detail::weighted_sum;
  Rng rng(seed);
  std::vector<OpCheck> out;
  auto check = [&](std::string name, std::vector<Tensor<double>> in,
                   std::function<Tensor<double>(const std::vector<Tensor<double>>&)> op) {
    const std::uint64_t wseed = rng.next_u64();
    const double err = grad_check(
        [&](const std::vector<Tensor<double>>& x) { return weighted_sum(op(x), wseed); }, std::move(in), eps);
    out.push_back({std::move(name), err});
  };
  auto rnd = [&](Shape s) { return detail::random_tensor(rng, std::move(s)); };
  const std::size_t r = 2 + rng.index(3), c = 2 + rng.index(4);

  check("add", {rnd({r, c}), rnd({r, c})}, [](const auto& x) { return add(x[0], x[1]); });
  check("add(suffix broadcast)", {rnd({3, r, c}), rnd({c})}, [](const auto& x) { return add(x[0], x[1]); });
  check("add(matrix suffix)", {rnd({c}), rnd({2, r, c})}, [](const auto& x) { return add(x[0], x[1]); });
  check("add(scalar)", {rnd({r, c}), rnd({})}, [](const auto& x) { return add(x[0], x[1]); });
  check("sub", {rnd({r, c}), rnd({c})}, [](const auto& x) { return sub(x[0], x[1]); });
  check("sub(scalar first)", {rnd({1}), rnd({r, c})}, [](const auto& x) { return sub(x[0], x[1]); });
  check("mul", {rnd({r, c}), rnd({r, c})}, [](const auto& x) { return mul(x[0], x[1]); });
  check("mul(broadcast)", {rnd({r, c}), rnd({c})}, [](const auto& x) { return mul(x[0], x[1]); });
  check("scale", {rnd({r, c})}, [](const auto& x) { return scale(x[0], -1.7); });
  check("relu", {detail::away_from_zero(rng, {r, c})}, [](const auto& x) { return relu(x[0]); });
  check("gelu", {detail::random_tensor(rng, {r, c}, -3.0, 3.0)}, [](const auto& x) { return gelu(x[0]); });
  check("sigmoid", {detail::random_tensor(rng, {r, c}, -4.0, 4.0)}, [](const auto& x) { return sigmoid(x[0]); });
  check("abs", {detail::away_from_zero(rng, {r, c})}, [](const auto& x) { return abs(x[0]); });
  check("sum", {rnd({r, c})}, [](const auto& x) { return scale(sum(x[0]), 0.3); });
  check("mean", {rnd({2, r, c})}, [](const auto& x) { return mean(x[0]); });
  check("max_lastdim", {detail::distinct(rng, {r, c})}, [](const auto& x) { return max_lastdim(x[0]); });
  check("segment_max_rows", {detail::distinct(rng, {5, c})},
        [](const auto& x) { return segment_max_rows(x[0], {0, 2, 3, 5}); });
  check("matmul", {rnd({r, 3}), rnd({3, c})}, [](const auto& x) { return matmul(x[0], x[1]); });
  check("matmul(shared rhs)", {rnd({2, r, 3}), rnd({3, c})}, [](const auto& x) { return matmul(x[0], x[1]); });
  check("matmul(batched)", {rnd({2, r, 3}), rnd({2, 3, c})}, [](const auto& x) { return matmul(x[0], x[1]); });
  check("transpose", {rnd({2, r, c})}, [](const auto& x) { return transpose(x[0]); });
  check("softmax_lastdim", {detail::random_tensor(rng, {r, c}, -2.0, 2.0)},
        [](const auto& x) { return softmax_lastdim(x[0]); });
  check("layer_norm", {rnd({r, c + 1}), rnd({c + 1}), rnd({c + 1})},
        [](const auto& x) { return layer_norm(x[0], x[1], x[2]); });
  check("reshape", {rnd({r, c})}, [r, c](const auto& x) { return reshape(x[0], {c, r}); });
  check("concat(axis 0)", {rnd({r, c}), rnd({1, c})},
        [](const auto& x) { return concat(std::vector<Tensor<double>>{x[0], x[1]}, 0); });
  check("concat(last axis)", {rnd({r, c}), rnd({r, 2})},
        [](const auto& x) { return concat(std::vector<Tensor<double>>{x[0], x[1]}, -1); });
  check("index_select", {rnd({r, c})}, [r](const auto& x) { return index_select(x[0], {r - 1, 0, r - 1}); });
  check("slice_lastdim", {rnd({r, c + 2})}, [](const auto& x) { return slice_lastdim(x[0], 1, 2); });
  check("attention", {rnd({r, 4}), rnd({c, 4}), rnd({c, 4})},
        [](const auto& x) { return attention(x[0], x[1], x[2], 2); });
  check("attention(single key)", {rnd({r, 6}), rnd({1, 6}), rnd({1, 6})},
        [](const auto& x) { return attention(x[0], x[1], x[2], 3); });
  check("log", {detail::random_tensor(rng, {r, c}, 0.5, 2.0)}, [](const auto& x) { return log(x[0]); });
  // Composite: mean softmax cross-entropy with class 0 as the target.
  check("softmax_cross_entropy", {rnd({r, c})}, [](const auto& x) {
    return scale(mean(log(slice_lastdim(softmax_lastdim(x[0]), 0, 1))), -1.0);
  });
  return detail::summarize(std::move(out));
}

/// Max error per named parameter of a scalar loss over a ParameterStore.
inline GradReport parameter_gradcheck(ParameterStore<double>& params, const std::function<Tensor<double>()>& loss,
                                      double eps = 1e-5) {
  params.zero_grad();
  backward(loss());
  std::vector<OpCheck> out;
  for (auto& [name, t] : params.entries()) {
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
    auto vals = t.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      NoGradGuard guard;
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double fp = loss().item();
      vals[i] = saved - eps;
      const double fm = loss().item();
      vals[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
    out.push_back({name, worst});
  }
  return detail::summarize(std::move(out));
}

/// The smallest model that still exercises every block type (under 2k parameters).
inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.encoder = {8, 1, 2, 2, 8};
  m.decoder.blocks = 1;
  m.decoder.d_model = 8;
  m.decoder.heads = 2;
  m.decoder.ffn_mult = 2;
  return m;
}

/// Synthetic cloud with valid targets: points on a sphere, outward normals.
inline PointCloud gradcheck_cloud(std::size_t n, Rng& rng) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p{rng.normal(), rng.normal(), rng.normal()};
    p = normalized(p);
    c.points.push_back(p);
    c.normals.push_back(p);
    c.variations.push_back(rng.uniform(0.0, kMaxVariation));
  }
  return c;
}

/// Full encoder/decoder/loss pipeline on a fixed mask, in 64-bit.
inline GradReport model_gradcheck(const ModelConfig& cfg, std::uint64_t seed = 1, double eps = 1e-5) {
  MaskFeatModel<double> model(cfg, seed);
  Rng rng(seed ^ 0x5eedULL);
  const PointCloud cloud = gradcheck_cloud(64, rng);
  const MaskingPlan plan = plan_masking(cloud.points, MaskingSettings{8, 8, 0.5, 0.5}, rng);
  return parameter_gradcheck(model.parameters(),
                             [&] { return forward_masked(model, cloud, plan).loss.total; }, eps);
}

}  // namespace mf3d
