#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "oracles.hpp"

using namespace mf3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mf3d_train_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<TargetCache> toy_data() {
  std::vector<TargetCache> data;
  std::uint64_t s = 1;
  for (const char* name : {"sphere", "box", "torus"})
    data.push_back(make_target_cache(sample_surface(make_primitive(name), 600, s++)));
  return data;
}

RunConfig toy_config(Precision p = Precision::F64) {
  RunConfig c;
  const auto m = tiny_model_config();
  c.encoder = m.encoder;
  c.decoder = m.decoder;
  c.train.num_points = 96;
  c.train.num_patches = 8;
  c.train.patch_size = 16;
  c.train.batch_size = 2;
  c.train.epochs = 3;
  c.train.warmup_epochs = 1;
  c.train.seed = 5;
  c.train.precision = p;
  c.train.lr_decoder = 1e-3;
  return c;
}

std::vector<double> flat_params(const Checkpoint& ck) {
  std::vector<double> out;
  for (const auto& b : ck.blobs) out.insert(out.end(), b.data.begin(), b.data.end());
  return out;
}

}  // namespace

TEST(AdamW, SingleStepMatchesHandComputation) {
  std::vector<double> p{0.5, -1.0}, g{0.2, -0.4}, m{0, 0}, v{0, 0};
  AdamWConfig cfg{0.1, 0.01, 0.9, 0.999, 1e-8};
  adamw_step<double>(p, g, m, v, 1, cfg);
  // Step 1: mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
  const double decay = 1.0 - 0.1 * 0.01;
  EXPECT_NEAR(p[0], 0.5 * decay - 0.1 * 0.2 / (0.2 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -1.0 * decay + 0.1 * 0.4 / (0.4 + 1e-8), 1e-15);
  EXPECT_NEAR(m[0], 0.02, 1e-16);
  EXPECT_NEAR(v[1], 0.001 * 0.16, 1e-16);
}

TEST(AdamW, SecondStepUsesBiasCorrection) {
  std::vector<double> p{1.0}, m{0}, v{0};
  AdamWConfig cfg{0.01, 0.0, 0.9, 0.999, 1e-8};
  adamw_step<double>(p, std::vector<double>{1.0}, m, v, 1, cfg);
  adamw_step<double>(p, std::vector<double>{-0.5}, m, v, 2, cfg);
  const double m2 = 0.9 * 0.1 + 0.1 * -0.5, v2 = 0.999 * 0.001 + 0.001 * 0.25;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 1.0 - 0.01 / (1.0 + 1e-8) - 0.01 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(AdamW, NonFiniteGradientLeavesParametersUntouched) {
  ParameterStore<double> store;
  auto a = store.add("encoder.a", {2}, {1.0, 2.0});
  auto b = store.add("decoder.b", {1}, {3.0});
  AdamW<double> opt(store, {{"encoder.", 0.1}, {"decoder.", 0.01}}, 0.0);
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = NAN;
  EXPECT_THROW(opt.step(), NumericError);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0u);
}

TEST(AdamW, GroupsUseTheirOwnLearningRate) {
  ParameterStore<double> store;
  auto a = store.add("encoder.a", {1}, {0.0});
  auto b = store.add("decoder.b", {1}, {0.0});
  AdamW<double> opt(store, {{"encoder.", 0.1}, {"decoder.", 0.01}}, 0.0);
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = 1.0;
  opt.step(0.5);
  EXPECT_NEAR(a[0], -0.05, 1e-9);
  EXPECT_NEAR(b[0], -0.005, 1e-9);
  ParameterStore<double> stray;
  stray.add("other.c", {1}, {0.0});
  EXPECT_THROW(AdamW<double>(stray, {{"encoder.", 0.1}}, 0.0), ConfigError);
}

TEST(Schedule, WarmupThenCosineToOnePercent) {
  EXPECT_DOUBLE_EQ(cosine_schedule(0, 100, 10, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(cosine_schedule(5, 100, 10, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(cosine_schedule(10, 100, 10, 2.0), 2.0);
  for (std::size_t s = 10; s <= 100; s += 9) {
    const double prog = (s - 10) / 90.0;
    EXPECT_NEAR(cosine_schedule(s, 100, 10, 2.0), 2.0 * (0.01 + 0.99 * 0.5 * (1 + std::cos(std::numbers::pi * prog))),
                1e-15);
  }
  EXPECT_NEAR(cosine_schedule(100, 100, 10, 2.0), 0.02, 1e-15);
  EXPECT_NEAR(cosine_schedule(150, 100, 10, 2.0), 0.02, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_schedule(3, 5, 5, 1.0), 0.6);
}

TEST(Augment, SimilarityTransformKeepsTargetsConsistent) {
  Rng rng(1);
  PointCloud c;
  c.points = oracle::random_points(rng, 50);
  for (int i = 0; i < 50; ++i) c.normals.push_back(oracle::random_unit(rng));
  c.variations.assign(50, 0.2);
  AugmentFlags flags{true, true, true, true};
  for (int t = 0; t < 20; ++t) {
    const Augmentation a = draw_augmentation(flags, rng);
    EXPECT_GE(a.scale, kScaleMin);
    EXPECT_LE(a.scale, kScaleMax);
    for (double x : a.translation) EXPECT_LE(std::abs(x), kTranslationRange);
    const auto out = apply_augmentation(c, a);
    // Distances scale uniformly; normals stay unit and keep their angle to edges.
    const double d0 = norm(c.points[1] - c.points[0]), d1 = norm(out.points[1] - out.points[0]);
    EXPECT_NEAR(d1, a.scale * d0, 1e-12);
    for (int i = 0; i < 50; ++i) EXPECT_NEAR(norm(out.normals[i]), 1.0, 1e-12);
    EXPECT_NEAR(dot(out.normals[0], out.points[1] - out.points[0]) / a.scale,
                dot(c.normals[0], c.points[1] - c.points[0]), 1e-12);
    EXPECT_EQ(out.variations, c.variations);
  }
}

TEST(Config, ParsesAndRoundTrips) {
  const json j = json::parse(R"({"encoder": {"d_model": 48, "heads": 4}, "decoder": {"blocks": 2,
    "attention_mode": "cross-only"}, "train": {"precision": "f64", "augment": {"translation": true}}})");
  const RunConfig c = parse_run_config(j);
  EXPECT_EQ(c.decoder.d_model, 48u);
  EXPECT_EQ(c.decoder.attention_mode, AttentionMode::CrossOnly);
  EXPECT_EQ(c.train.precision, Precision::F64);
  EXPECT_TRUE(c.train.augment.translation);
  EXPECT_EQ(to_json(parse_run_config(to_json(c))), to_json(c));
}

TEST(Config, RejectsInvalidValuesWithFieldPath) {
  auto msg = [](const char* text) {
    try {
      parse_run_config(json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  EXPECT_NE(msg(R"({"train": {"mask_ratio": 1.2}})").find("train.mask_ratio"), std::string::npos);
  EXPECT_NE(msg(R"({"train": {"foo": 1}})").find("train.foo"), std::string::npos);
  EXPECT_NE(msg(R"({"encoder": {"d_model": "wide"}})").find("encoder.d_model"), std::string::npos);
  EXPECT_NE(msg(R"({"decoder": {"query_ratio": 0}})").find("decoder.query_ratio"), std::string::npos);
  EXPECT_NE(msg(R"({"encoder": {"d_model": 10, "heads": 4}})").find("encoder.d_model"), std::string::npos);
  EXPECT_NE(msg(R"({"train": {"precision": "f16"}})").find("train.precision"), std::string::npos);
}

TEST(Checkpoint, RoundTripsThroughBytes) {
  const auto data = toy_data();
  Trainer<double> tr(toy_config(), data);
  const std::vector<std::size_t> batch{0, 1};
  tr.train_step(batch);
  const Checkpoint ck = tr.checkpoint();
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.state, ck.state);
  EXPECT_EQ(to_json(back.config), to_json(ck.config));
  EXPECT_EQ(flat_params(back), flat_params(ck));
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruptBytes) {
  const auto data = toy_data();
  Trainer<double> tr(toy_config(), data);
  std::string bytes = encode_checkpoint(tr.checkpoint());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_THROW(decode_checkpoint(bad_version), UnsupportedVersionError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, LoadModelChecksWidth) {
  const auto data = toy_data();
  Trainer<double> tr(toy_config(), data);
  const auto ck = tr.checkpoint();
  auto model = load_model<double>(ck);
  EXPECT_EQ(model->parameters().scalar_count(), tr.model().parameters().scalar_count());
  ModelConfig other = ck.config.model();
  other.encoder.d_model = other.decoder.d_model = 16;
  EXPECT_THROW(load_model<double>(ck, &other), ConfigError);
}

TEST(Trainer, SeededRunsAreBitIdentical) {
  const auto data = toy_data();
  const auto a = pretrain(data, toy_config());
  const auto b = pretrain(data, toy_config());
  ASSERT_EQ(a.steps.size(), 6u);
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss, b.steps[i].loss);
  EXPECT_EQ(flat_params(a.final_checkpoint), flat_params(b.final_checkpoint));
  auto other = toy_config();
  other.train.seed = 6;
  EXPECT_NE(pretrain(data, other).steps[0].loss, a.steps[0].loss);
}

TEST(Trainer, ResumeIsBitIdentical) {
  const auto data = toy_data();
  const auto dir = temp_dir("resume");
  PretrainOptions full;
  full.out_dir = dir / "full";
  const auto a = pretrain(data, toy_config(), full);

  auto partial_cfg = toy_config();
  PretrainOptions first;
  first.out_dir = dir / "part";
  first.max_steps = 2;  // one epoch
  pretrain(data, partial_cfg, first);
  PretrainOptions rest;
  rest.out_dir = dir / "part";
  rest.resume = dir / "part" / "checkpoints" / "epoch_0001.ckpt";
  const auto b = pretrain(data, toy_config(), rest);

  ASSERT_EQ(b.steps.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.steps[i].loss, a.steps[i + 2].loss);
  EXPECT_EQ(flat_params(a.final_checkpoint), flat_params(b.final_checkpoint));
  EXPECT_EQ(a.final_checkpoint.state, b.final_checkpoint.state);
  EXPECT_TRUE(fs::exists(dir / "full" / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "full" / "train_log.jsonl"));
}

TEST(Trainer, ResumeRejectsADifferentModel) {
  const auto data = toy_data();
  Trainer<double> a(toy_config(), data);
  auto cfg = toy_config();
  cfg.decoder.blocks = 2;
  Trainer<double> b(cfg, data);
  EXPECT_THROW(b.restore(a.checkpoint()), ConfigError);
}

TEST(Trainer, SinglePrecisionRunIsFiniteAndLearns) {
  const auto data = toy_data();
  auto cfg = toy_config(Precision::F32);
  cfg.train.epochs = 10;
  const auto r = pretrain(data, cfg);
  for (const auto& s : r.steps) EXPECT_TRUE(std::isfinite(s.loss));
  EXPECT_LT(r.epochs.back().loss, r.epochs.front().loss);
}

TEST(Features, ShapeAndDeterminism) {
  const MaskFeatModel<double> model(tiny_model_config(), 3);
  const auto cloud = to_point_cloud(toy_data()[0]);
  const auto f = extract_features(model, cloud.points, 8, 16, 1);
  EXPECT_EQ(f.blocks.size(), 8u);
  EXPECT_EQ(f.pooled.size(), 8u);
  const auto g = extract_features(model, cloud.points, 8, 16, 1);
  EXPECT_EQ(f.pooled, g.pooled);
}

TEST(Probe, NearestNeighborAccuracy) {
  const std::vector<std::vector<double>> train{{0, 0}, {10, 10}}, test{{1, 0}, {9, 9}, {0, 1}};
  EXPECT_DOUBLE_EQ(nearest_neighbor_accuracy(train, {"a", "b"}, test, {"a", "b", "b"}), 2.0 / 3.0);
  EXPECT_THROW(nearest_neighbor_accuracy({}, {}, test, {"a", "b", "b"}), InputError);
}
