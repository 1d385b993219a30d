#include "biocular/losses.hpp"

#include <stdexcept>

namespace biocular {

RegularizationGammas regularization_gammas(int resolution, int batch_size) {
  const double r = resolution;
  RegularizationGammas g;
  g.gamma1 = 1e-4 * (2.0 * r * r / batch_size);
  g.gamma2 = std::log(2.0) / (r * r * (std::log(r) - std::log(2.0)));
  return g;
}

PathLengths path_lengths(const BimodalPair& pair, const torch::Tensor& ws, const torch::Tensor& q_vis,
                         const torch::Tensor& q_nir, double pl_mean) {
  auto projected = (pair.vis * q_vis).sum() + (pair.nir * q_nir).sum();
  auto grads = torch::autograd::grad({projected}, {ws}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                     /*create_graph=*/true, /*allow_unused=*/true);
  if (!grads[0].defined())
    throw std::runtime_error("path_lengths: generated pair does not depend on the style inputs");
  torch::Tensor sq = ws.dim() == 3 ? grads[0].square().sum(2).mean(1) : grads[0].square().sum(1);
  PathLengths out;
  out.lengths = sq.sqrt();
  out.penalty = (out.lengths - pl_mean).square().mean();
  return out;
}

std::pair<torch::Tensor, torch::Tensor> sample_path_length_probes(const BimodalPair& pair,
                                                                  std::optional<at::Generator> gen) {
  const double norm = std::sqrt(static_cast<double>(pair.vis.size(2) * pair.vis.size(3)));
  auto draw = [&](const torch::Tensor& like) {
    return (gen ? torch::randn(like.sizes(), *gen, like.options()) : torch::randn_like(like)) / norm;
  };
  auto q_vis = draw(pair.vis);
  auto q_nir = draw(pair.nir);
  return {q_vis, q_nir};
}

void self_test_second_order_gradients() {
  torch::manual_seed(0);
  SynthesisConfig cfg;
  cfg.latent_dim = 4;
  cfg.output_resolution = 8;
  cfg.channels = {{4, 2}, {8, 2}};
  cfg.mapping_layers = 1;
  Generator g(cfg);
  Discriminator d(cfg, Domain::kVis);
  auto ws = g->map_latent(torch::randn({2, 4})).detach().requires_grad_(true);
  auto pair = g->synthesize(ws, NoiseMode::kZero, 0).pair;
  auto [qv, qn] = sample_path_length_probes(pair);
  auto pl = path_lengths(pair, ws, qv, qn, 0.0).penalty;
  auto r1 = r1_penalty([&](const torch::Tensor& x) { return d->forward(x); }, pair.vis.detach(), 1.0);
  (pl + r1).backward();
  bool ok = false;
  for (auto& p : g->parameters()) ok = ok || (p.grad().defined() && p.grad().abs().sum().item<double>() > 0);
  bool ok_d = false;
  for (auto& p : d->parameters()) ok_d = ok_d || (p.grad().defined() && p.grad().abs().sum().item<double>() > 0);
  if (!ok || !ok_d)
    throw std::runtime_error("second-order gradient self-test failed: regularizers produced no parameter gradients");
}

}  // namespace biocular
