#pragma once

// Masked-feature pretraining loop over a set of target caches.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mf3d/augment.hpp"
#include "mf3d/checkpoint.hpp"
#include "mf3d/config.hpp"
#include "mf3d/io.hpp"
#include "mf3d/model.hpp"
#include "mf3d/optim.hpp"

namespace mf3d {

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double loss = 0.0;
  double loss_n = 0.0;
  double loss_v = 0.0;
  double lr = 0.0;  // encoder-group learning rate

  json to_json() const {
    return {{"epoch", epoch}, {"step", step}, {"loss", loss}, {"loss_n", loss_n}, {"loss_v", loss_v}, {"lr", lr}};
  }
};

struct PretrainOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints or log written
  std::optional<std::filesystem::path> resume;
  std::uint64_t max_steps = 0;  // stop once global_step reaches this; 0 runs every epoch
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const LossRecord&)> on_epoch;
};

struct PretrainResult {
  std::vector<LossRecord> steps;
  std::vector<LossRecord> epochs;
  Checkpoint final_checkpoint;
  std::filesystem::path last_checkpoint;  // empty when nothing was written
};

/// N distinct points (with their targets) drawn from a cache.
inline PointCloud sample_training_cloud(const TargetCache& cache, std::size_t n, Rng& rng) {
  if (cache.size() < n)
    throw InputError("cache holds " + std::to_string(cache.size()) + " points, need " + std::to_string(n));
  PointCloud out;
  out.points.reserve(n);
  out.normals.reserve(n);
  out.variations.reserve(n);
  for (std::size_t i : sample_without_replacement(rng, cache.size(), n)) {
    out.points.push_back(to_double(cache.points[i]));
    out.normals.push_back(to_double(cache.normals[i]));
    out.variations.push_back(cache.variations[i]);
  }
  return out;
}

inline std::vector<std::filesystem::path> list_caches(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("cache directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".mf3d") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<TargetCache> load_caches(const std::filesystem::path& dir) {
  std::vector<TargetCache> out;
  for (const auto& f : list_caches(dir)) out.push_back(read_cache(f));
  if (out.empty()) throw InputError("no .mf3d caches in " + dir.string());
  return out;
}

template <class T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const std::vector<TargetCache>& data)
      : cfg_(cfg), data_(&data), model_(cfg.model(), model_seed(cfg.train.seed)),
        optim_(model_.parameters(), {{"encoder.", cfg.train.lr_encoder}, {"decoder.", cfg.train.lr_decoder}},
               cfg.train.weight_decay) {
    cfg.validate();
    if (data.empty()) throw InputError("pretraining needs at least one cache");
    Rng root(cfg.train.seed);
    root.next_u64();
    state_.rng = root.fork().state();
  }

  std::size_t batch_size() const { return std::min(cfg_.train.batch_size, data_->size()); }
  std::size_t steps_per_epoch() const { return (data_->size() + batch_size() - 1) / batch_size(); }
  std::size_t total_steps() const { return cfg_.train.epochs * steps_per_epoch(); }
  std::size_t warmup_steps() const { return cfg_.train.warmup_epochs * steps_per_epoch(); }

  MaskFeatModel<T>& model() { return model_; }
  AdamW<T>& optimizer() { return optim_; }
  const TrainState& state() const { return state_; }
  const RunConfig& config() const { return cfg_; }

  Checkpoint checkpoint() const { return make_checkpoint<T>(cfg_, state_, model_.parameters(), &optim_); }

  void restore(const Checkpoint& ck) {
    auto model_json = [](const RunConfig& c) {
      const json j = to_json(c);
      return json{{"encoder", j.at("encoder")}, {"decoder", j.at("decoder")}};
    };
    if (model_json(cfg_) != model_json(ck.config))
      throw ConfigError("resume checkpoint was trained with a different model configuration");
    restore_checkpoint<T>(ck, model_.parameters(), &optim_);
    state_ = ck.state;
  }

  /// Shuffled shape order for the next epoch.
  std::vector<std::size_t> epoch_order() {
    Rng rng = rng_from_state();
    std::vector<std::size_t> order(data_->size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(rng, order);
    state_.rng = rng.state();
    return order;
  }

  /// One optimizer update over the given shapes.
  LossRecord train_step(std::span<const std::size_t> batch) {
    Rng rng = rng_from_state();
    auto& params = model_.parameters();
    params.zero_grad();
    const T inv_b = T(1) / static_cast<T>(batch.size());
    double loss = 0.0, loss_n = 0.0, loss_v = 0.0;
    for (std::size_t idx : batch) {
      const PointCloud sample =
          augment(sample_training_cloud((*data_)[idx], cfg_.train.num_points, rng), cfg_.train.augment, rng);
      const MaskingPlan plan = plan_masking(sample.points, cfg_.masking(), rng);
      auto out = forward_masked(model_, sample, plan, cfg_.train.loss_weights);
      const double l = static_cast<double>(out.loss.total.item());
      if (!std::isfinite(l))
        throw NumericError("non-finite loss at step " + std::to_string(state_.global_step + 1));
      loss += l;
      loss_n += static_cast<double>(out.loss.normal.item());
      loss_v += static_cast<double>(out.loss.variation.item());
      backward(scale(out.loss.total, inv_b));
    }
    const double factor = cosine_schedule(state_.global_step + 1, total_steps(), warmup_steps(), 1.0);
    optim_.step(factor);
    state_.rng = rng.state();
    ++state_.global_step;
    state_.adam_step = optim_.step_count();
    const double b = static_cast<double>(batch.size());
    return {state_.epoch + 1, state_.global_step, loss / b, loss_n / b, loss_v / b, cfg_.train.lr_encoder * factor};
  }

  void finish_epoch() { ++state_.epoch; }

 private:
  static std::uint64_t model_seed(std::uint64_t seed) {
    Rng root(seed);
    return root.next_u64();
  }

  Rng rng_from_state() const {
    Rng r;
    r.set_state(state_.rng);
    return r;
  }

  RunConfig cfg_;
  const std::vector<TargetCache>* data_;
  MaskFeatModel<T> model_;
  AdamW<T> optim_;
  TrainState state_;
};

namespace detail {

inline std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.ckpt", epoch);
  return buf;
}

template <class T>
PretrainResult run_pretrain(const std::vector<TargetCache>& data, const RunConfig& cfg, const PretrainOptions& opt) {
  Trainer<T> trainer(cfg, data);
  if (opt.resume) trainer.restore(read_checkpoint(*opt.resume));

  PretrainResult result;
  const bool write = !opt.out_dir.empty();
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw InputError("cannot open training log in " + opt.out_dir.string());
  }
  std::string last_good = opt.resume ? opt.resume->string() : std::string("none");

  auto budget_left = [&] { return opt.max_steps == 0 || trainer.state().global_step < opt.max_steps; };
  try {
    while (trainer.state().epoch < cfg.train.epochs && budget_left()) {
      const auto order = trainer.epoch_order();
      const std::size_t b = trainer.batch_size();
      LossRecord sum;
      std::size_t n = 0;
      for (std::size_t s = 0; s < trainer.steps_per_epoch() && budget_left(); ++s) {
        const std::size_t begin = s * b, end = std::min(order.size(), begin + b);
        const LossRecord rec = trainer.train_step(std::span<const std::size_t>(order).subspan(begin, end - begin));
        result.steps.push_back(rec);
        if (opt.on_step) opt.on_step(rec);
        sum.loss += rec.loss;
        sum.loss_n += rec.loss_n;
        sum.loss_v += rec.loss_v;
        sum.lr = rec.lr;
        sum.step = rec.step;
        ++n;
      }
      const bool complete = n == trainer.steps_per_epoch();
      sum.epoch = trainer.state().epoch + 1;
      sum.loss /= static_cast<double>(n);
      sum.loss_n /= static_cast<double>(n);
      sum.loss_v /= static_cast<double>(n);
      result.epochs.push_back(sum);
      if (opt.on_epoch) opt.on_epoch(sum);
      if (!complete) break;
      trainer.finish_epoch();
      if (write) {
        log << sum.to_json().dump() << '\n' << std::flush;
        const Checkpoint ck = trainer.checkpoint();
        const auto dir = opt.out_dir / "checkpoints";
        std::filesystem::create_directories(dir);
        write_checkpoint(ck, dir / epoch_checkpoint_name(trainer.state().epoch));
        write_checkpoint(ck, dir / "last.ckpt");
        last_good = (dir / "last.ckpt").string();
        result.last_checkpoint = dir / "last.ckpt";
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; training aborted, last good checkpoint: " + last_good);
  }
  result.final_checkpoint = trainer.checkpoint();
  return result;
}

}  // namespace detail

/// Runs pretraining in the precision named by the config.
inline PretrainResult pretrain(const std::vector<TargetCache>& data, const RunConfig& cfg,
                               const PretrainOptions& opt = {}) {
  return cfg.train.precision == Precision::F64 ? detail::run_pretrain<double>(data, cfg, opt)
                                               : detail::run_pretrain<float>(data, cfg, opt);
}

}  // namespace mf3d
