#include <gtest/gtest.h>

#include <cmath>

#include "biocular/errors.hpp"
#include "biocular/layers.hpp"

using namespace biocular;

namespace {

// Reference path: materialize per-sample weights and run one grouped convolution.
torch::Tensor grouped_reference(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& styles,
                                bool demod) {
  const auto n = x.size(0);
  auto w = modulated_weights(weight, styles, demod);  // [N, Cout, Cin, k, k]
  auto wf = w.reshape({n * weight.size(0), weight.size(1), weight.size(2), weight.size(3)});
  auto y = torch::conv2d(x.reshape({1, n * x.size(1), x.size(2), x.size(3)}), wf, {}, 1, weight.size(2) / 2, 1, n);
  return y.reshape({n, weight.size(0), x.size(2), x.size(3)});
}

}  // namespace

TEST(ModulatedConv, UnitStylesWithoutDemodIsPlainConvolution) {
  torch::manual_seed(1);
  auto x = torch::randn({2, 5, 6, 6}, torch::kFloat64);
  auto w = torch::randn({4, 5, 3, 3}, torch::kFloat64);
  auto y = modulated_conv(x, w, torch::ones({2, 5}, torch::kFloat64), false);
  auto ref = torch::conv2d(x, w, {}, 1, 1);
  EXPECT_TRUE(torch::allclose(y, ref, 1e-12, 1e-12));
}

TEST(ModulatedConv, MatchesGroupedConvolutionOfMaterializedWeights) {
  torch::manual_seed(2);
  auto x = torch::randn({3, 4, 5, 5}, torch::kFloat64);
  auto w = torch::randn({6, 4, 3, 3}, torch::kFloat64);
  auto s = torch::rand({3, 4}, torch::kFloat64) + 0.2;
  for (bool demod : {false, true})
    EXPECT_TRUE(torch::allclose(modulated_conv(x, w, s, demod), grouped_reference(x, w, s, demod), 1e-10, 1e-10))
        << "demod=" << demod;
}

TEST(ModulatedConv, OneByOneDemodulationFormula) {
  const double v = -0.7, s = 1.3, eps = 1e-8;
  auto w = torch::full({1, 1, 1, 1}, v, torch::kFloat64);
  auto x = torch::ones({1, 1, 1, 1}, torch::kFloat64);
  const double out = modulated_conv(x, w, torch::full({1, 1}, s, torch::kFloat64), true, eps).item<double>();
  EXPECT_NEAR(out, s * v / std::sqrt(s * s * v * v + eps), 1e-14);
  EXPECT_NEAR(out, -1.0, 1e-6);
}

TEST(ModulatedConv, ZeroStylesStayFinite) {
  auto w = torch::randn({2, 3, 3, 3}, torch::kFloat64);
  auto x = torch::randn({1, 3, 4, 4}, torch::kFloat64);
  auto eff = modulated_weights(w, torch::zeros({1, 3}, torch::kFloat64), true, 1e-8);
  EXPECT_TRUE(torch::isfinite(eff).all().item<bool>());
  EXPECT_LE((eff.abs() - w.abs().unsqueeze(0) / std::sqrt(1e-8)).max().item<double>(), 0.0);
  auto y = modulated_conv(x, w, torch::zeros({1, 3}, torch::kFloat64), true);
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
}

TEST(ModulatedConv, DemodulatedRowNormsInUnitInterval) {
  torch::manual_seed(3);
  auto w = torch::randn({8, 5, 3, 3}, torch::kFloat64);
  auto s = torch::randn({4, 5}, torch::kFloat64);
  auto norms = modulated_weights(w, s, true).square().sum({2, 3, 4}).sqrt();
  EXPECT_GT(norms.min().item<double>(), 0.0);
  EXPECT_LE(norms.max().item<double>(), 1.0);
  EXPECT_NEAR(norms.max().item<double>(), 1.0, 1e-6);
}

TEST(ModulatedConv, ChannelMismatchIsConfigError) {
  auto w = torch::randn({2, 3, 3, 3});
  EXPECT_THROW(modulated_conv(torch::randn({1, 4, 4, 4}), w, torch::ones({1, 3}), true), ConfigError);
  EXPECT_THROW(modulated_conv(torch::randn({1, 3, 4, 4}), w, torch::ones({1, 4}), true), ConfigError);
  EXPECT_THROW(modulated_conv(torch::randn({1, 3, 4, 4}), w, torch::ones({1, 3}), true, 0.0), ConfigError);
}

TEST(Upsample, BilinearTwoByTwoMatchesDirectEvaluation) {
  auto x = torch::tensor({0.0, 0.0, 1.0, 1.0}, torch::kFloat64).view({1, 1, 2, 2});
  auto y = upsample_bilinear(x, 4)[0][0];
  // Aligned corners off: output pixel i samples input coordinate (i + 0.5) / 2 - 0.5, clamped.
  for (int i = 0; i < 4; ++i) {
    const double src = std::clamp((i + 0.5) / 2.0 - 0.5, 0.0, 1.0);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y[i][j].item<double>(), src, 1e-12) << i << "," << j;
  }
}

TEST(Upsample, ConstantPlaneStaysConstant) {
  auto y = upsample_bilinear(torch::full({1, 2, 3, 3}, 0.37), 12);
  EXPECT_TRUE(torch::allclose(y, torch::full_like(y, 0.37)));
}

TEST(EqualLinear, EffectiveWeightRoundTrip) {
  EqualLinear l(4, 3, std::sqrt(2.0), 0.01);
  auto w = torch::randn({3, 4});
  l->set_effective_weight(w);
  l->set_effective_bias(torch::full({3}, 0.5));
  EXPECT_TRUE(torch::allclose(l->effective_weight(), w, 1e-5, 1e-6));
  auto x = torch::randn({2, 4});
  EXPECT_TRUE(torch::allclose(l->forward(x), torch::addmm(torch::full({3}, 0.5), x, w.t()), 1e-4, 1e-5));
}
