#include "biocular/discriminator.hpp"

namespace biocular {

namespace F = torch::nn::functional;

Domain domain_from_string(const std::string& s) {
  if (s == "vis" || s == "VIS") return Domain::kVis;
  if (s == "nir" || s == "NIR") return Domain::kNir;
  throw ConfigError("unknown modality '" + s + "' (expected vis or nir)");
}

ResidualDownBlockImpl::ResidualDownBlockImpl(int in_channels, int out_channels) {
  conv0 = register_module("conv0", EqualConv2d(in_channels, in_channels, 3, kActivationGain));
  conv1 = register_module("conv1", EqualConv2d(in_channels, out_channels, 3, kActivationGain));
  skip = register_module("skip", EqualConv2d(in_channels, out_channels, 1, 1.0, /*bias=*/false));
}

torch::Tensor ResidualDownBlockImpl::forward(const torch::Tensor& x) {
  auto s = skip->forward(F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)));
  auto y = lrelu(conv0->forward(x));
  y = F::avg_pool2d(lrelu(conv1->forward(y)), F::AvgPool2dFuncOptions(2));
  return (s + y) * std::sqrt(0.5);
}

DiscriminatorImpl::DiscriminatorImpl(const SynthesisConfig& config, Domain domain)
    : domain_(domain), resolution_(config.output_resolution) {
  config.validate();
  const int top = config.channels_at(resolution_);
  from_image = register_module("from_image", EqualConv2d(image_channels(domain), top, 1, kActivationGain));
  for (int r = resolution_; r > 4; r /= 2) {
    blocks.push_back(register_module("b" + std::to_string(r),
                                     ResidualDownBlock(config.channels_at(r), config.channels_at(r / 2))));
  }
  const int c4 = config.channels_at(4);
  final_conv = register_module("final_conv", EqualConv2d(c4, c4, 3, kActivationGain));
  fc = register_module("fc", EqualLinear(c4 * 16, c4, kActivationGain));
  out = register_module("out", EqualLinear(c4, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != image_channels(domain_))
    throw InputError(std::string("discriminator (") + to_string(domain_) + ") expects [N, " +
                     std::to_string(image_channels(domain_)) + ", R, R] input, got " +
                     c10::str(images.sizes()));
  if (images.size(2) != resolution_ || images.size(3) != resolution_)
    throw InputError("discriminator expects " + std::to_string(resolution_) + "x" +
                     std::to_string(resolution_) + " input, got " + c10::str(images.sizes()));
  auto x = lrelu(from_image->forward(images));
  for (auto& b : blocks) x = b->forward(x);
  x = lrelu(final_conv->forward(x));
  x = lrelu(fc->forward(x.flatten(1)));
  return out->forward(x).squeeze(1);
}

}  // namespace biocular
