#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "biocular/discriminator.hpp"
#include "biocular/errors.hpp"
#include "biocular/generator.hpp"

namespace biocular {

struct RegularizationGammas {
  double gamma1 = 0;  // R1 weight
  double gamma2 = 0;  // path-length weight
};

/// gamma1 = 1e-4 * 2 r^2 / bs,  gamma2 = ln 2 / (r^2 (ln r - ln 2)).
RegularizationGammas regularization_gammas(int resolution, int batch_size);

/// Lazy regularization: the penalty runs on every `interval`-th step and is
/// scaled by `interval` so its per-step contribution is unchanged on average.
struct LazySchedule {
  int interval = 1;

  bool active(std::int64_t step) const { return interval > 0 && step % interval == 0; }
  double scale() const { return static_cast<double>(interval); }
  /// Weight to apply at `step`: scale() when active, 0 otherwise.
  double weight(std::int64_t step) const { return active(step) ? scale() : 0.0; }
};

/// Non-saturating soft-plus s(x) = log(1 + exp(x)).
inline torch::Tensor soft_plus(const torch::Tensor& x) { return torch::nn::functional::softplus(x); }

struct DiscriminatorLoss {
  torch::Tensor total;
  double fake_term = 0;  // mean s(D(x))
  double real_term = 0;  // mean s(-D(y))
  double r1_term = 0;    // weighted R1 contribution included in total
  double mean_abs_logit = 0;
};

/// mean s(D(fake)) + mean s(-D(real)) [+ r1_weight * gamma1/2 E||grad D(real)||^2].
/// `fake` must be detached from the generator graph. r1_weight = 0 disables R1.
template <typename Critic>
DiscriminatorLoss discriminator_loss(Critic&& critic, const torch::Tensor& fake, const torch::Tensor& real,
                                     double gamma1, double r1_weight) {
  if (fake.requires_grad())
    throw InputError("discriminator_loss: fake batch must be detached from the generator graph");
  DiscriminatorLoss out;
  auto fake_logits = critic(fake);
  auto real_logits = critic(real);
  auto fake_term = soft_plus(fake_logits).mean();
  auto real_term = soft_plus(-real_logits).mean();
  out.total = fake_term + real_term;
  out.fake_term = fake_term.template item<double>();
  out.real_term = real_term.template item<double>();
  out.mean_abs_logit = std::max(fake_logits.detach().abs().mean().template item<double>(),
                                real_logits.detach().abs().mean().template item<double>());
  if (r1_weight > 0) {
    auto r1 = r1_penalty(critic, real, gamma1) * r1_weight;
    out.total = out.total + r1;
    out.r1_term = r1.template item<double>();
  }
  if (!std::isfinite(out.total.template item<double>()))
    throw DivergenceError("discriminator loss is not finite (fake=" + std::to_string(out.fake_term) +
                          ", real=" + std::to_string(out.real_term) + ", r1=" + std::to_string(out.r1_term) +
                          ")");
  return out;
}

/// Running average `a` of path lengths.
struct PathLengthState {
  double mean = 0.0;
  double decay = 0.99;

  /// a <- a + (1 - decay) (observed - a)
  void update(double observed) { mean += (1.0 - decay) * (observed - mean); }
};

struct PathLengths {
  torch::Tensor lengths;  // J per sample, [N]
  torch::Tensor penalty;  // mean (J - a)^2, differentiable
};

/// J = || d/dw sum_w <x_w, q_w> ||, taken with respect to the style inputs
/// `ws` ([N, w_dim] or [N, L, w_dim]; for per-layer styles the squared norm
/// is averaged over layers). `pair` must have been produced from `ws`.
PathLengths path_lengths(const BimodalPair& pair, const torch::Tensor& ws, const torch::Tensor& q_vis,
                         const torch::Tensor& q_nir, double pl_mean);

/// Normal path-length probe images scaled by 1 / sqrt(H W).
std::pair<torch::Tensor, torch::Tensor> sample_path_length_probes(const BimodalPair& pair,
                                                                  std::optional<at::Generator> gen = {});

struct GeneratorLoss {
  torch::Tensor total;
  double adversarial_vis = 0;  // mean s(-D_vis(x_vis))
  double adversarial_nir = 0;
  double pl_term = 0;          // weighted penalty included in total
  double pl_length = 0;        // mean J of this step (0 when inactive)
};

struct PathLengthProbes {
  torch::Tensor q_vis;
  torch::Tensor q_nir;
};

/// sum_w s(-D_w(x_w)) + pl_weight * gamma2 * E(J - a)^2; updates `pl` when
/// the path-length term is active (pl_weight > 0). `pair_fn(ws)` regenerates
/// the pair with gradient flow; `ws` must require grad when PL is active.
template <typename PairFn, typename CriticVis, typename CriticNir>
GeneratorLoss generator_loss(const torch::Tensor& ws, PairFn&& pair_fn, CriticVis&& d_vis, CriticNir&& d_nir,
                             PathLengthState& pl, double gamma2, double pl_weight,
                             const std::optional<PathLengthProbes>& probes = std::nullopt) {
  GeneratorLoss out;
  BimodalPair pair = pair_fn(ws);
  auto adv_vis = soft_plus(-d_vis(pair.vis)).mean();
  auto adv_nir = soft_plus(-d_nir(pair.nir)).mean();
  out.total = adv_vis + adv_nir;
  out.adversarial_vis = adv_vis.template item<double>();
  out.adversarial_nir = adv_nir.template item<double>();
  if (pl_weight > 0) {
    if (!ws.requires_grad())
      throw InputError("generator_loss: style inputs must require grad for the path-length term");
    auto [q_vis, q_nir] = probes ? std::pair{probes->q_vis, probes->q_nir} : sample_path_length_probes(pair);
    auto pls = path_lengths(pair, ws, q_vis, q_nir, pl.mean);
    auto term = pls.penalty * (gamma2 * pl_weight);
    out.total = out.total + term;
    out.pl_term = term.template item<double>();
    out.pl_length = pls.lengths.detach().mean().template item<double>();
    pl.update(out.pl_length);
  }
  if (!std::isfinite(out.total.template item<double>()))
    throw DivergenceError("generator loss is not finite");
  return out;
}

/// Runs a tiny double-backward through modulated convolution and a residual
/// critic. Throws std::runtime_error when second-order gradients are unavailable.
void self_test_second_order_gradients();

}  // namespace biocular
