#pragma once

#include <climits>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "biocular/layers.hpp"

namespace biocular {

enum class NoiseMode { kRandom, kFixed, kZero };

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(const std::string& s);

/// Architecture of the dual-branch generator (and, by mirroring, the discriminators).
struct SynthesisConfig {
  int latent_dim = 64;
  int base_resolution = 4;
  int output_resolution = 32;
  /// resolution -> channel count, defined for every power of two from 4 to output_resolution
  std::map<int, int> channels{{4, 128}, {8, 128}, {16, 64}, {32, 64}};
  int mapping_layers = 8;
  double mapping_lr_multiplier = 0.01;
  NoiseMode noise_mode = NoiseMode::kRandom;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  std::vector<int> block_resolutions() const;
  /// One entry per style input (one per convolution layer).
  std::vector<int> style_input_resolutions() const;
  int num_style_inputs() const { return static_cast<int>(style_input_resolutions().size()); }
  int channels_at(int resolution) const;

  static SynthesisConfig desk();
  static SynthesisConfig full();

  bool operator==(const SynthesisConfig&) const = default;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

/// Pixel-aligned VIS ([N, 3, R, R]) and NIR ([N, 1, R, R]) images in [-1, 1].
struct BimodalPair {
  torch::Tensor vis;
  torch::Tensor nir;
};

struct FeatureTap {
  std::string id;
  int resolution = 0;
  torch::Tensor tensor;  // [N, C, resolution, resolution], post-activation
};

/// Post-activation outputs of every style block, in synthesis order.
struct FeatureStack {
  std::vector<FeatureTap> taps;

  std::int64_t total_channels() const;
  /// Layer ids, resolutions and channel counts; identifies a tap layout.
  std::string fingerprint() const;
};

struct SynthesisResult {
  BimodalPair pair;
  FeatureStack features;
};

/// z -> w: input normalized to norm sqrt(latent_dim), then fully connected
/// layers with leaky ReLU.
class MappingNetworkImpl : public torch::nn::Module {
 public:
  explicit MappingNetworkImpl(const SynthesisConfig& config);

  torch::Tensor forward(const torch::Tensor& z);

  std::vector<EqualLinear>& layers() { return layers_; }
  int latent_dim() const { return latent_dim_; }

 private:
  int latent_dim_;
  std::vector<EqualLinear> layers_;
};
TORCH_MODULE(MappingNetwork);

torch::Tensor normalize_latent(const torch::Tensor& z);

/// 3x3 modulated convolution + noise + bias + leaky ReLU, optionally preceded
/// by a 2x bilinear upsample.
class StyledConvImpl : public torch::nn::Module {
 public:
  StyledConvImpl(int in_channels, int out_channels, int w_dim, bool upsample);

  /// noise may be undefined (no noise injected).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& noise);

  EqualLinear affine{nullptr};
  torch::Tensor weight;
  torch::Tensor noise_strength;
  torch::Tensor bias;
  bool upsample;
};
TORCH_MODULE(StyledConv);

/// 1x1 modulated convolution without demodulation (tVIS / tNIR).
class ToImageImpl : public torch::nn::Module {
 public:
  ToImageImpl(int in_channels, int image_channels, int w_dim);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

  EqualLinear affine{nullptr};
  torch::Tensor weight;
  torch::Tensor bias;
};
TORCH_MODULE(ToImage);

/// One resolution of the synthesis network. The 4x4 block holds a single
/// convolution; every later block upsamples and holds two.
class SynthesisBlockImpl : public torch::nn::Module {
 public:
  SynthesisBlockImpl(int resolution, int in_channels, int out_channels, int w_dim);

  int resolution() const { return resolution_; }
  int num_convs() const { return static_cast<int>(convs.size()); }

  std::vector<StyledConv> convs;
  ToImage to_vis{nullptr};
  ToImage to_nir{nullptr};

 private:
  int resolution_;
};
TORCH_MODULE(SynthesisBlock);

class SynthesisNetworkImpl : public torch::nn::Module {
 public:
  explicit SynthesisNetworkImpl(const SynthesisConfig& config);

  /// ws: [N, w_dim] (broadcast to every style input) or [N, L, w_dim].
  /// noise_seed is used only for NoiseMode::kFixed.
  SynthesisResult forward(const torch::Tensor& ws, NoiseMode noise_mode, std::uint64_t noise_seed);

  const SynthesisConfig& config() const { return config_; }
  std::vector<SynthesisBlock>& blocks() { return blocks_; }
  torch::Tensor const_input;

 private:
  SynthesisConfig config_;
  std::vector<SynthesisBlock> blocks_;
};
TORCH_MODULE(SynthesisNetwork);

/// Broadcasts [N, w_dim] to [N, L, w_dim]; validates [N, L, w_dim].
torch::Tensor broadcast_styles(const torch::Tensor& ws, int num_style_inputs);

/// G(z) = g(f(z)): mapping network plus dual-branch synthesis network.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const SynthesisConfig& config);

  /// Throws ConfigError when z does not have latent_dim columns or holds non-finite values.
  torch::Tensor map_latent(const torch::Tensor& z);
  SynthesisResult synthesize(const torch::Tensor& ws, std::uint64_t noise_seed = 0);
  SynthesisResult synthesize(const torch::Tensor& ws, NoiseMode mode, std::uint64_t noise_seed);
  SynthesisResult forward(const torch::Tensor& z, std::uint64_t noise_seed = 0);

  const SynthesisConfig& config() const { return config_; }

  MappingNetwork mapping{nullptr};
  SynthesisNetwork synthesis{nullptr};

 private:
  SynthesisConfig config_;
};
TORCH_MODULE(Generator);

/// Sentinels for style_mix: crossover resolution covering every block / no block.
inline constexpr int kCrossoverAllA = INT_MAX;
inline constexpr int kCrossoverAllB = 0;

/// Per-layer styles where inputs of blocks at resolution <= crossover use w_a
/// and the rest use w_b. Result: [N, L, w_dim].
torch::Tensor style_mix(const torch::Tensor& w_a, const torch::Tensor& w_b, int crossover_resolution,
                        const SynthesisConfig& config);

/// Standard-normal latents drawn from a seeded generator, [count, latent_dim].
torch::Tensor sample_latents(std::int64_t count, int latent_dim, std::uint64_t seed);

}  // namespace biocular
