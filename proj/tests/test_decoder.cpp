#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace mf3d;

namespace {

DecoderConfig small_decoder(AttentionMode mode) {
  DecoderConfig c;
  c.blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 4;
  c.attention_mode = mode;
  return c;
}

BlockFeatures<double> random_blocks(Rng& rng, std::size_t n, std::size_t d) {
  BlockFeatures<double> b;
  b.features = detail::random_tensor(rng, {n, d});
  b.centroids = oracle::random_points(rng, n);
  for (std::size_t i = 0; i < n; ++i) b.patch_ids.push_back(i);
  return b;
}

}  // namespace

TEST(Decoder, ParameterCountMatchesHandCount) {
  // position MLP 3-8-8: 32 + 72. Block: three norms 48, two attentions of
  // 3*64 + 64 + 8 each, FFN 8-32-8: 288 + 264. Final norm 16, head 8-8-4: 72 + 36.
  const std::size_t self_cross = 104 + (48 + 2 * 264 + 552) + 16 + 108;
  const std::size_t cross_only = self_cross - 264 - 16;
  EXPECT_EQ(self_cross, 1356u);
  EXPECT_EQ(cross_only, 1076u);
  for (auto [mode, want] : {std::pair{AttentionMode::SelfCross, self_cross}, {AttentionMode::CrossOnly, cross_only}}) {
    ParameterStore<double> store;
    Rng rng(1);
    Decoder<double> dec(store, small_decoder(mode), rng);
    EXPECT_EQ(store.scalar_count(), want);
    EXPECT_EQ(count_parameters(small_decoder(mode)), want);
  }
}

TEST(Decoder, CrossOnlyQueriesAreIndependent) {
  Rng rng(2);
  ParameterStore<double> store;
  Decoder<double> dec(store, small_decoder(AttentionMode::CrossOnly), rng);
  const auto blocks = random_blocks(rng, 6, 8);
  auto queries = oracle::random_points(rng, 10);
  const auto base = dec.decode(blocks, queries);
  for (std::size_t moved = 0; moved < queries.size(); ++moved) {
    auto q2 = queries;
    q2[moved] = q2[moved] + Vec3{0.3, -0.2, 0.1};
    const auto p = dec.decode(blocks, q2);
    for (std::size_t r = 0; r < queries.size(); ++r) {
      bool same = true;
      for (int j = 0; j < 3; ++j) same &= p.normals[3 * r + j] == base.normals[3 * r + j];
      same &= p.variations[r] == base.variations[r];
      if (r == moved)
        EXPECT_FALSE(same);
      else
        EXPECT_TRUE(same) << "row " << r << " changed when query " << moved << " moved";
    }
  }
}

TEST(Decoder, SelfAttentionCouplesQueries) {
  Rng rng(3);
  ParameterStore<double> store;
  Decoder<double> dec(store, small_decoder(AttentionMode::SelfCross), rng);
  const auto blocks = random_blocks(rng, 6, 8);
  auto queries = oracle::random_points(rng, 10);
  const auto base = dec.decode(blocks, queries);
  queries[0] = queries[0] + Vec3{0.3, -0.2, 0.1};
  const auto p = dec.decode(blocks, queries);
  for (std::size_t r = 1; r < queries.size(); ++r) EXPECT_NE(p.normals[3 * r], base.normals[3 * r]);
}

TEST(Decoder, VariationOutputIsBounded) {
  Rng rng(4);
  ParameterStore<double> store;
  auto cfg = small_decoder(AttentionMode::SelfCross);
  Decoder<double> dec(store, cfg, rng);
  auto blocks = random_blocks(rng, 4, 8);
  for (std::size_t i = 0; i < blocks.features.numel(); ++i) blocks.features.mutable_values()[i] *= 50.0;
  const auto p = dec.decode(blocks, oracle::random_points(rng, 64, -5, 5));
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_GE(p.variations[i], 0.0);
    EXPECT_LE(p.variations[i], 1.0 / 3.0);
  }
}

TEST(Decoder, RejectsMismatchedWidth) {
  Rng rng(5);
  ParameterStore<double> store;
  Decoder<double> dec(store, small_decoder(AttentionMode::SelfCross), rng);
  EXPECT_THROW(dec.decode(random_blocks(rng, 3, 12), oracle::random_points(rng, 2)), ShapeError);
  EXPECT_THROW(dec.decode(random_blocks(rng, 3, 8), std::vector<Vec3>{}), InputError);
}

TEST(Loss, PerfectPredictionIsZero) {
  Prediction<double> p;
  p.normals = Tensor<double>::from({2, 3}, {0, 0, 1, 0.6, 0.8, 0});
  p.variations = Tensor<double>::from({2, 1}, {0.1, 0.2});
  const auto l = masked_feature_loss(p, p.normals.clone(), p.variations.clone());
  EXPECT_EQ(l.total.item(), 0.0);
}

TEST(Loss, AntipodalNormalsCostFourTimesTheNormalWeight) {
  Prediction<double> p;
  p.normals = Tensor<double>::from({2, 3}, {0, 0, 1, 0.6, 0.8, 0});
  p.variations = Tensor<double>::from({2, 1}, {0.1, 0.2});
  const auto target = Tensor<double>::from({2, 3}, {0, 0, -1, -0.6, -0.8, 0});
  EXPECT_DOUBLE_EQ(masked_feature_loss(p, target, p.variations.clone()).total.item(), 4.0);
  EXPECT_DOUBLE_EQ(masked_feature_loss(p, target, p.variations.clone(), {2.5, 1.0}).total.item(), 10.0);
}

TEST(Loss, VariationTermIsMeanAbsoluteError) {
  Prediction<double> p;
  p.normals = Tensor<double>::from({2, 3}, {0, 0, 1, 0, 0, 1});
  p.variations = Tensor<double>::from({2, 1}, {0.1, 0.2});
  const auto l = masked_feature_loss(p, p.normals.clone(), Tensor<double>::from({2, 1}, {0.0, 0.3}));
  EXPECT_NEAR(l.variation.item(), 0.1, 1e-15);
  EXPECT_THROW(masked_feature_loss(p, Tensor<double>::zeros({3, 3}), p.variations.clone()), ShapeError);
}

TEST(Model, FullGradientCheckOnTinyModel) {
  const auto report = model_gradcheck(tiny_model_config());
  EXPECT_LT(report.max_error, 1e-3) << report.worst;
  EXPECT_LE(MaskFeatModel<double>(tiny_model_config(), 1).parameters().scalar_count(), 2000u);
}
