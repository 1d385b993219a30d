#include <gtest/gtest.h>

#include <cmath>

#include "biocular/errors.hpp"
#include "biocular/generator.hpp"

using namespace biocular;

namespace {

SynthesisConfig small_config() {
  SynthesisConfig c;
  c.latent_dim = 16;
  c.output_resolution = 32;
  c.channels = {{4, 16}, {8, 16}, {16, 8}, {32, 8}};
  return c;
}

bool same(const torch::Tensor& a, const torch::Tensor& b) { return a.sizes() == b.sizes() && torch::equal(a, b); }

}  // namespace

TEST(Mapping, IdentityLayersReturnNormalizedLatent) {
  auto cfg = small_config();
  torch::manual_seed(0);
  Generator g(cfg);
  for (auto& l : g->mapping->layers()) {
    l->set_effective_weight(torch::eye(cfg.latent_dim));
    l->set_effective_bias(torch::zeros({cfg.latent_dim}));
  }
  auto z = torch::zeros({1, cfg.latent_dim});
  z[0][0] = 3.5;
  auto w = g->map_latent(z);
  auto expected = torch::zeros({1, cfg.latent_dim});
  expected[0][0] = std::sqrt(static_cast<double>(cfg.latent_dim));
  EXPECT_TRUE(torch::allclose(w, expected, 1e-4, 1e-5)) << w;
}

TEST(Mapping, DeterministicAndShaped) {
  auto cfg = small_config();
  Generator g(cfg);
  auto z = sample_latents(2, cfg.latent_dim, 5);
  auto w1 = g->map_latent(z);
  auto w2 = g->map_latent(z);
  EXPECT_TRUE(same(w1, w2));
  EXPECT_EQ(w1.size(1), cfg.latent_dim);
}

TEST(Mapping, RejectsBadLatents) {
  Generator g(small_config());
  EXPECT_THROW(g->map_latent(torch::zeros({1, 15})), ConfigError);
  auto z = torch::zeros({1, 16});
  z[0][3] = std::nan("");
  EXPECT_THROW(g->map_latent(z), ConfigError);
}

TEST(Synthesis, ShapesAndTapLayout) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  auto r = g->forward(sample_latents(2, cfg.latent_dim, 1), 3);
  EXPECT_EQ(r.pair.vis.sizes(), torch::IntArrayRef({2, 3, 32, 32}));
  EXPECT_EQ(r.pair.nir.sizes(), torch::IntArrayRef({2, 1, 32, 32}));
  // one tap for the 4x4 block, two for each of 8, 16, 32
  ASSERT_EQ(r.features.taps.size(), 7u);
  int prev = 0;
  for (const auto& t : r.features.taps) {
    EXPECT_GE(t.resolution, prev);
    prev = t.resolution;
    EXPECT_EQ(t.tensor.size(-1), t.resolution);
  }
  EXPECT_EQ(r.features.total_channels(), 16 + 2 * 16 + 2 * 8 + 2 * 8);
  EXPECT_EQ(r.features.fingerprint(), "b4_conv0@4:16;b8_conv0@8:16;b8_conv1@8:16;b16_conv0@16:8;b16_conv1@16:8;"
                                      "b32_conv0@32:8;b32_conv1@32:8");
}

TEST(Synthesis, FixedNoiseIsDeterministic) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  auto ws = g->map_latent(sample_latents(1, cfg.latent_dim, 9));
  auto a = g->synthesize(ws, NoiseMode::kFixed, 42);
  auto b = g->synthesize(ws, NoiseMode::kFixed, 42);
  EXPECT_TRUE(same(a.pair.vis, b.pair.vis));
  EXPECT_TRUE(same(a.pair.nir, b.pair.nir));
  for (std::size_t i = 0; i < a.features.taps.size(); ++i)
    EXPECT_TRUE(same(a.features.taps[i].tensor, b.features.taps[i].tensor));
  auto z1 = g->synthesize(ws, NoiseMode::kZero, 1);
  auto z2 = g->synthesize(ws, NoiseMode::kZero, 2);
  EXPECT_TRUE(same(z1.pair.vis, z2.pair.vis));
}

TEST(Synthesis, BroadcastEqualsExplicitPerLayerList) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  auto w = g->map_latent(sample_latents(2, cfg.latent_dim, 3));
  auto per_layer = w.unsqueeze(1).repeat({1, cfg.num_style_inputs(), 1});
  auto a = g->synthesize(w, NoiseMode::kFixed, 1);
  auto b = g->synthesize(per_layer, NoiseMode::kFixed, 1);
  EXPECT_TRUE(torch::allclose(a.pair.vis, b.pair.vis));
  EXPECT_TRUE(torch::allclose(a.pair.nir, b.pair.nir));
}

TEST(Synthesis, WrongStyleCountIsRejected) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  EXPECT_THROW(g->synthesize(torch::zeros({1, 3, cfg.latent_dim}), NoiseMode::kZero, 0), ConfigError);
}

TEST(Synthesis, BranchesShareTheTrunk) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  auto ws = g->map_latent(sample_latents(1, cfg.latent_dim, 4));
  auto before = g->synthesize(ws, NoiseMode::kFixed, 7);
  for (auto& b : g->synthesis->blocks()) {
    b->to_nir->weight.add_(1.0);
    b->to_nir->bias.add_(0.5);
  }
  auto after = g->synthesize(ws, NoiseMode::kFixed, 7);
  EXPECT_TRUE(same(before.pair.vis, after.pair.vis));
  EXPECT_FALSE(same(before.pair.nir, after.pair.nir));
  for (std::size_t i = 0; i < before.features.taps.size(); ++i)
    EXPECT_TRUE(same(before.features.taps[i].tensor, after.features.taps[i].tensor));
}

TEST(Config, ValidationAndPresets) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.output_resolution = 24;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.channels.erase(16);
  EXPECT_THROW(c.validate(), ConfigError);
  auto full = SynthesisConfig::full();
  EXPECT_EQ(full.latent_dim, 512);
  EXPECT_EQ(full.output_resolution, 256);
  auto desk = SynthesisConfig::desk();
  EXPECT_EQ(desk.latent_dim, 64);
  EXPECT_EQ(desk.channels.at(4), 128);
  EXPECT_EQ(desk.channels.at(32), 64);
  EXPECT_EQ(nlohmann::json(desk).get<SynthesisConfig>(), desk);
}

TEST(StyleMix, CrossoverSixteenAssignsLowBlocksToA) {
  auto cfg = small_config();
  auto wa = torch::zeros({1, cfg.latent_dim});
  auto wb = torch::ones({1, cfg.latent_dim});
  auto mixed = style_mix(wa, wb, 16, cfg);
  const auto res = cfg.style_input_resolutions();
  ASSERT_EQ(mixed.size(1), static_cast<std::int64_t>(res.size()));
  for (std::size_t i = 0; i < res.size(); ++i)
    EXPECT_EQ(mixed[0][static_cast<std::int64_t>(i)][0].item<float>(), res[i] <= 16 ? 0.0f : 1.0f) << res[i];
}

TEST(StyleMix, SentinelsAndSymmetry) {
  auto cfg = small_config();
  Generator g(cfg);
  torch::NoGradGuard guard;
  auto wa = g->map_latent(sample_latents(1, cfg.latent_dim, 1));
  auto wb = g->map_latent(sample_latents(1, cfg.latent_dim, 2));
  auto alone = g->synthesize(wa, NoiseMode::kFixed, 0);
  auto all_a = g->synthesize(style_mix(wa, wb, kCrossoverAllA, cfg), NoiseMode::kFixed, 0);
  EXPECT_TRUE(torch::allclose(alone.pair.vis, all_a.pair.vis));
  auto all_b = style_mix(wa, wb, kCrossoverAllB, cfg);
  EXPECT_TRUE(torch::equal(all_b, wb.unsqueeze(1).expand_as(all_b)));
  auto self = g->synthesize(style_mix(wa, wa, 8, cfg), NoiseMode::kFixed, 0);
  EXPECT_TRUE(torch::allclose(alone.pair.nir, self.pair.nir));
  EXPECT_THROW(style_mix(wa, wb, 12, cfg), ConfigError);
}
