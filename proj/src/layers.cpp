#include "biocular/layers.hpp"

#include <string>

#include "biocular/errors.hpp"

namespace biocular {

namespace F = torch::nn::functional;

torch::Tensor upsample_bilinear(const torch::Tensor& x, std::int64_t size) {
  if (x.size(-1) == size && x.size(-2) == size) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{size, size})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor modulated_weights(const torch::Tensor& weight, const torch::Tensor& style_scales,
                                bool demodulate, double eps) {
  if (weight.dim() != 4) throw ConfigError("modulated conv weight must be [Cout, Cin, k, k]");
  if (eps <= 0) throw ConfigError("modulated conv eps must be positive");
  auto styles = style_scales.dim() == 1 ? style_scales.unsqueeze(0) : style_scales;
  if (styles.dim() != 2 || styles.size(1) != weight.size(1))
    throw ConfigError("style scales have " + std::to_string(styles.size(-1)) +
                      " entries but the weight expects " + std::to_string(weight.size(1)) +
                      " input channels");
  auto w = weight.unsqueeze(0) * styles.view({styles.size(0), 1, -1, 1, 1});
  if (demodulate) {
    auto d = torch::rsqrt(w.square().sum({2, 3, 4}, /*keepdim=*/true) + eps);
    w = w * d;
  }
  return w;
}

torch::Tensor modulated_conv(const torch::Tensor& input, const torch::Tensor& weight,
                             const torch::Tensor& style_scales, bool demodulate, double eps) {
  if (input.dim() != 4) throw ConfigError("modulated conv input must be [N, C, H, W]");
  if (input.size(1) != weight.size(1))
    throw ConfigError("modulated conv input has " + std::to_string(input.size(1)) +
                      " channels, weight expects " + std::to_string(weight.size(1)));
  if (eps <= 0) throw ConfigError("modulated conv eps must be positive");
  auto styles = style_scales.dim() == 1 ? style_scales.unsqueeze(0) : style_scales;
  if (styles.dim() != 2 || styles.size(1) != weight.size(1))
    throw ConfigError("style scales have " + std::to_string(styles.size(-1)) +
                      " entries but the weight expects " + std::to_string(weight.size(1)) +
                      " input channels");
  if (styles.size(0) != 1 && styles.size(0) != input.size(0))
    throw ConfigError("style batch does not match input batch");
  // Per-sample weight modulation expressed as input/output scaling around one
  // shared convolution: conv(x * s, w) * d == conv(x, s * w * d).
  auto y = F::conv2d(input * styles.view({styles.size(0), -1, 1, 1}), weight,
                     F::Conv2dFuncOptions().padding(weight.size(2) / 2));
  if (demodulate) {
    auto d = torch::rsqrt(torch::matmul(styles.square(), weight.square().sum({2, 3}).t()) + eps);
    y = y * d.view({d.size(0), -1, 1, 1});
  }
  return y;
}

EqualLinearImpl::EqualLinearImpl(std::int64_t in_features, std::int64_t out_features, double gain,
                                 double lr_multiplier, double bias_init)
    : weight_scale_(gain * lr_multiplier / std::sqrt(static_cast<double>(in_features))),
      bias_scale_(lr_multiplier) {
  weight = register_parameter("weight", torch::randn({out_features, in_features}) / lr_multiplier);
  bias = register_parameter("bias", torch::full({out_features}, bias_init / lr_multiplier));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
  return torch::addmm(bias * bias_scale_, x, (weight * weight_scale_).t());
}

void EqualLinearImpl::set_effective_weight(const torch::Tensor& w) {
  torch::NoGradGuard guard;
  weight.copy_(w / weight_scale_);
}

void EqualLinearImpl::set_effective_bias(const torch::Tensor& b) {
  torch::NoGradGuard guard;
  bias.copy_(b / bias_scale_);
}

EqualConv2dImpl::EqualConv2dImpl(std::int64_t in_channels, std::int64_t out_channels,
                                 std::int64_t kernel, double gain, bool with_bias)
    : weight_scale_(gain / std::sqrt(static_cast<double>(in_channels * kernel * kernel))),
      padding_(kernel / 2) {
  weight = register_parameter("weight", torch::randn({out_channels, in_channels, kernel, kernel}));
  if (with_bias) bias = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor EqualConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, weight * weight_scale_,
                   F::Conv2dFuncOptions().padding(padding_).bias(bias.defined() ? bias : torch::Tensor()));
}

}  // namespace biocular
