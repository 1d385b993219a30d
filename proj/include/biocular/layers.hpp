#pragma once

#include <cmath>
#include <cstdint>

#include <torch/torch.h>

namespace biocular {

constexpr double kLeakySlope = 0.2;
// He gain for leaky ReLU layers, folded into the runtime weight scale.
inline const double kActivationGain = std::sqrt(2.0);

inline torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

/// Bilinear resize with aligned corners off.
torch::Tensor upsample_bilinear(const torch::Tensor& x, std::int64_t size);

/// Effective per-sample weights of a modulated convolution.
///
/// weight: [Cout, Cin, k, k]; style_scales: [N, Cin] or [Cin].
/// Returns [N, Cout, Cin, k, k] with w' = s * w and, when demodulating,
/// w'' = w' / sqrt(sum(w'^2) + eps) per output channel.
torch::Tensor modulated_weights(const torch::Tensor& weight, const torch::Tensor& style_scales,
                                bool demodulate, double eps = 1e-8);

/// Convolution with style-modulated (and optionally demodulated) weights.
/// input: [N, Cin, H, W]. Padding keeps the spatial size.
/// Throws ConfigError when style_scales does not match Cin.
torch::Tensor modulated_conv(const torch::Tensor& input, const torch::Tensor& weight,
                             const torch::Tensor& style_scales, bool demodulate, double eps = 1e-8);

/// Fully connected layer with equalized learning rate: weights are stored
/// unit-variance and scaled at runtime by gain * lr_multiplier / sqrt(fan_in).
class EqualLinearImpl : public torch::nn::Module {
 public:
  EqualLinearImpl(std::int64_t in_features, std::int64_t out_features, double gain = 1.0,
                  double lr_multiplier = 1.0, double bias_init = 0.0);

  torch::Tensor forward(const torch::Tensor& x);

  /// Weight as applied in forward().
  torch::Tensor effective_weight() const { return weight * weight_scale_; }
  /// Sets the stored weight so that effective_weight() == w.
  void set_effective_weight(const torch::Tensor& w);
  void set_effective_bias(const torch::Tensor& b);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double weight_scale_;
  double bias_scale_;
};
TORCH_MODULE(EqualLinear);

/// Plain 2-D convolution with equalized learning rate and "same" padding.
class EqualConv2dImpl : public torch::nn::Module {
 public:
  EqualConv2dImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                  double gain = 1.0, bool bias = true);

  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;  // undefined when constructed without bias

 private:
  double weight_scale_;
  std::int64_t padding_;
};
TORCH_MODULE(EqualConv2d);

}  // namespace biocular
