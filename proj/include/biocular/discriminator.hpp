#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "biocular/errors.hpp"
#include "biocular/generator.hpp"
#include "biocular/layers.hpp"

namespace biocular {

enum class Domain { kVis, kNir };

inline int image_channels(Domain d) { return d == Domain::kVis ? 3 : 1; }
inline const char* to_string(Domain d) { return d == Domain::kVis ? "vis" : "nir"; }
Domain domain_from_string(const std::string& s);

/// Residual downsampling block: two 3x3 convolutions plus a 1x1 skip, both
/// paths halved by average pooling.
class ResidualDownBlockImpl : public torch::nn::Module {
 public:
  ResidualDownBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  EqualConv2d conv0{nullptr};
  EqualConv2d conv1{nullptr};
  EqualConv2d skip{nullptr};
};
TORCH_MODULE(ResidualDownBlock);

/// from-domain 1x1 convolution, residual blocks down to 4x4, dense head.
/// forward() returns one unbounded logit per image, shape [N].
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const SynthesisConfig& config, Domain domain);

  /// Throws InputError on a wrong channel count or resolution.
  torch::Tensor forward(const torch::Tensor& images);

  Domain domain() const { return domain_; }

  EqualConv2d from_image{nullptr};
  std::vector<ResidualDownBlock> blocks;
  EqualConv2d final_conv{nullptr};
  EqualLinear fc{nullptr};
  EqualLinear out{nullptr};

 private:
  Domain domain_;
  int resolution_;
};
TORCH_MODULE(Discriminator);

/// gamma1 / 2 * batch mean of ||d critic(y) / d y||^2, differentiable with
/// respect to the critic's parameters.
///
/// `critic` maps a [N, ...] batch to [N] logits.
template <typename Critic>
torch::Tensor r1_penalty(Critic&& critic, const torch::Tensor& real_batch, double gamma1) {
  auto real = real_batch.detach().requires_grad_(true);
  auto logits = critic(real);
  if (!logits.requires_grad())
    return torch::zeros({}, real.options());  // constant critic: zero input gradient
  auto grads = torch::autograd::grad({logits.sum()}, {real}, /*grad_outputs=*/{},
                                     /*retain_graph=*/true, /*create_graph=*/true,
                                     /*allow_unused=*/true);
  if (!grads[0].defined()) return torch::zeros({}, real.options());
  auto sq = grads[0].square().flatten(1).sum(1);
  return 0.5 * gamma1 * sq.mean();
}

}  // namespace biocular
