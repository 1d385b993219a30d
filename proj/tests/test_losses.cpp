#include <gtest/gtest.h>

#include <cmath>

#include "biocular/losses.hpp"

using namespace biocular;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

torch::Tensor zero_critic(const torch::Tensor& x) { return x.flatten(1).sum(1) * 0.0; }

// Tiny smooth critic with all parameters in one flat vector so finite
// differences can poke each entry.
struct FlatCritic {
  torch::Tensor theta;  // w1 [8*6], b1 [6], w2 [6], b2 [1]
  torch::Tensor operator()(const torch::Tensor& x) const {
    auto w1 = theta.slice(0, 0, 48).view({6, 8});
    auto b1 = theta.slice(0, 48, 54);
    auto w2 = theta.slice(0, 54, 60);
    auto b2 = theta.slice(0, 60, 61);
    auto h = torch::tanh(torch::matmul(x.flatten(1), w1.t()) + b1);
    return torch::matmul(h, w2) + b2;
  }
};

// Tiny smooth generator ws [N, 4] -> vis [N, 3, 2, 2], nir [N, 1, 2, 2].
struct FlatGenerator {
  torch::Tensor theta;  // w1 [8*4], b1 [8], w2 [16*8], b2 [16]
  BimodalPair operator()(const torch::Tensor& ws) const {
    auto w1 = theta.slice(0, 0, 32).view({8, 4});
    auto b1 = theta.slice(0, 32, 40);
    auto w2 = theta.slice(0, 40, 168).view({16, 8});
    auto b2 = theta.slice(0, 168, 184);
    auto h = torch::tanh(torch::matmul(ws, w1.t()) + b1);
    auto out = torch::tanh(torch::matmul(h, w2.t()) + b2);
    return {out.slice(1, 0, 12).view({-1, 3, 2, 2}), out.slice(1, 12, 16).view({-1, 1, 2, 2})};
  }
};

double relative_error(const torch::Tensor& a, const torch::Tensor& b) {
  return ((a - b).norm() / torch::clamp_min(b.norm(), 1e-12)).item<double>();
}

template <typename F>
torch::Tensor finite_difference(const torch::Tensor& theta, F&& f, double h = 1e-6) {
  auto fd = torch::zeros_like(theta);
  for (int64_t i = 0; i < theta.numel(); ++i) {
    auto plus = theta.clone();
    auto minus = theta.clone();
    plus[i] += h;
    minus[i] -= h;
    fd[i] = (f(plus) - f(minus)) / (2 * h);
  }
  return fd;
}

}  // namespace

TEST(Losses, ZeroCriticGivesTwoLnTwo) {
  auto fake = torch::randn({5, 3, 4, 4});
  auto real = torch::randn({5, 3, 4, 4});
  auto d = discriminator_loss(zero_critic, fake, real, 1.0, 0.0);
  EXPECT_NEAR(d.total.item<double>(), 2 * std::log(2.0), 1e-6);

  auto ws = torch::randn({3, 4}, kF64);
  auto lift = [](const torch::Tensor& w) {
    return BimodalPair{w.sum(1).view({-1, 1, 1, 1}).expand({-1, 3, 2, 2}), w.sum(1).view({-1, 1, 1, 1})};
  };
  PathLengthState pl;
  auto g = generator_loss(ws, lift, zero_critic, zero_critic, pl, 1.0, 0.0);
  EXPECT_NEAR(g.total.item<double>(), 2 * std::log(2.0), 1e-12);
}

TEST(Losses, AttachedFakeBatchIsRejected) {
  auto fake = torch::randn({2, 3, 4, 4}).requires_grad_(true);
  auto real = torch::randn({2, 3, 4, 4});
  EXPECT_THROW(discriminator_loss(zero_critic, fake * 2, real, 1.0, 0.0), InputError);
}

TEST(Losses, GammaClosedForms) {
  auto g = regularization_gammas(256, 16);
  EXPECT_NEAR(g.gamma1, 0.8192, 1e-12);
  EXPECT_NEAR(g.gamma2, std::log(2.0) / (65536.0 * std::log(128.0)), 1e-18);
  EXPECT_NEAR(g.gamma2, 2.18e-6, 0.01e-6);
  EXPECT_NEAR(regularization_gammas(32, 16).gamma1, 0.0128, 1e-12);
  EXPECT_NEAR(regularization_gammas(64, 32).gamma1, 0.0256, 1e-12);
}

TEST(Losses, R1OfLinearCriticIsSquaredNorm) {
  auto a = torch::randn({2 * 3 * 3}, kF64);
  auto linear = [&](const torch::Tensor& y) { return torch::matmul(y.flatten(1), a); };
  auto real = torch::randn({4, 2, 3, 3}, kF64);
  auto r1 = r1_penalty(linear, real, 2.0).item<double>();
  EXPECT_NEAR(r1, a.square().sum().item<double>(), 1e-10);
  EXPECT_EQ(r1_penalty(zero_critic, real, 2.0).item<double>(), 0.0);
  auto constant = [](const torch::Tensor& y) { return torch::full({y.size(0)}, 3.0, y.options()); };
  EXPECT_EQ(r1_penalty(constant, real, 2.0).item<double>(), 0.0);
}

TEST(Losses, R1ParameterGradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  auto theta = (torch::randn({61}, kF64) * 0.5).requires_grad_(true);
  auto real = torch::randn({5, 2, 2, 2}, kF64);
  const double gamma = 0.7;
  auto r1 = r1_penalty(FlatCritic{theta}, real, gamma);
  auto grad = torch::autograd::grad({r1}, {theta})[0];
  auto fd = finite_difference(theta.detach(), [&](const torch::Tensor& t) {
    return r1_penalty(FlatCritic{t}, real, gamma).item<double>();
  });
  EXPECT_LT(relative_error(grad, fd), 1e-3);
}

TEST(Losses, DiscriminatorLossGradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  auto theta = (torch::randn({61}, kF64) * 0.5).requires_grad_(true);
  auto real = torch::randn({5, 2, 2, 2}, kF64);
  auto fake = torch::randn({5, 2, 2, 2}, kF64);
  auto loss = discriminator_loss(FlatCritic{theta}, fake, real, 0.3, 4.0);
  auto grad = torch::autograd::grad({loss.total}, {theta})[0];
  auto fd = finite_difference(theta.detach(), [&](const torch::Tensor& t) {
    return discriminator_loss(FlatCritic{t}, fake, real, 0.3, 4.0).total.item<double>();
  });
  EXPECT_LT(relative_error(grad, fd), 1e-3);
}

TEST(Losses, PathLengthParameterGradientMatchesFiniteDifferences) {
  torch::manual_seed(5);
  auto theta = (torch::randn({184}, kF64) * 0.5).requires_grad_(true);
  auto ws0 = torch::randn({3, 4}, kF64);
  auto qv = torch::randn({3, 3, 2, 2}, kF64) / 2.0;
  auto qn = torch::randn({3, 1, 2, 2}, kF64) / 2.0;
  const double a = 0.3;
  auto penalty = [&](const torch::Tensor& t) {
    auto ws = ws0.clone().requires_grad_(true);
    return path_lengths(FlatGenerator{t}(ws), ws, qv, qn, a).penalty;
  };
  auto grad = torch::autograd::grad({penalty(theta)}, {theta})[0];
  auto fd = finite_difference(theta.detach(), [&](const torch::Tensor& t) { return penalty(t).item<double>(); });
  EXPECT_LT(relative_error(grad, fd), 1e-3);
}

TEST(Losses, PathLengthOfLinearGeneratorIsClosedForm) {
  torch::manual_seed(6);
  auto av = torch::randn({12, 4}, kF64);
  auto an = torch::randn({4, 4}, kF64);
  auto linear = [&](const torch::Tensor& w) {
    return BimodalPair{torch::matmul(w, av.t()).view({-1, 3, 2, 2}), torch::matmul(w, an.t()).view({-1, 1, 2, 2})};
  };
  auto ws = torch::randn({2, 4}, kF64).requires_grad_(true);
  auto qv = torch::randn({2, 3, 2, 2}, kF64);
  auto qn = torch::randn({2, 1, 2, 2}, kF64);
  const double a = 1.5;
  auto pls = path_lengths(linear(ws), ws, qv, qn, a);
  auto expected_j = (torch::matmul(qv.flatten(1), av) + torch::matmul(qn.flatten(1), an)).norm(2, 1);
  EXPECT_LT((pls.lengths - expected_j).abs().max().item<double>(), 1e-10);
  const double expected = (expected_j - a).square().mean().item<double>();
  EXPECT_NEAR(pls.penalty.item<double>(), expected, 1e-10);

  PathLengthState pl;
  pl.mean = a;
  const double gamma2 = 0.25;
  auto g = generator_loss(ws, linear, zero_critic, zero_critic, pl, gamma2, 1.0, PathLengthProbes{qv, qn});
  EXPECT_NEAR(g.pl_term, gamma2 * expected, 1e-10);
  EXPECT_NEAR(g.total.item<double>(), 2 * std::log(2.0) + gamma2 * expected, 1e-10);
  EXPECT_NEAR(pl.mean, a + 0.01 * (expected_j.mean().item<double>() - a), 1e-10);
}

TEST(Losses, PathLengthRequiresGradOnStyles) {
  auto ws = torch::randn({2, 4}, kF64);
  auto lift = [](const torch::Tensor& w) {
    return BimodalPair{w.sum(1).view({-1, 1, 1, 1}).expand({-1, 3, 2, 2}), w.sum(1).view({-1, 1, 1, 1})};
  };
  PathLengthState pl;
  EXPECT_THROW(generator_loss(ws, lift, zero_critic, zero_critic, pl, 1.0, 1.0), InputError);
}

TEST(Losses, ProbesAreScaledByImageArea) {
  BimodalPair pair{torch::zeros({64, 3, 16, 16}), torch::zeros({64, 1, 16, 16})};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  auto [qv, qn] = sample_path_length_probes(pair, gen);
  EXPECT_EQ(qv.sizes(), pair.vis.sizes());
  EXPECT_EQ(qn.sizes(), pair.nir.sizes());
  EXPECT_NEAR(qv.std().item<double>(), 1.0 / 16.0, 0.002);
}

TEST(Losses, LazyScheduleFiresEveryIntervalWithCompensatingWeight) {
  LazySchedule s{16};
  int fired = 0;
  double total = 0;
  for (int step = 0; step < 160; ++step) {
    fired += s.active(step);
    total += s.weight(step);
  }
  EXPECT_EQ(fired, 10);
  EXPECT_DOUBLE_EQ(total, 160.0);
  EXPECT_TRUE(s.active(0));
  EXPECT_FALSE(s.active(15));
  EXPECT_EQ(s.weight(3), 0.0);
  EXPECT_EQ(s.weight(32), 16.0);
}

TEST(Losses, SecondOrderSelfTestPasses) { EXPECT_NO_THROW(self_test_second_order_gradients()); }
