#include "biocular/generator.hpp"

#include <sstream>

#include "biocular/errors.hpp"

namespace biocular {

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::kRandom: return "random";
    case NoiseMode::kFixed: return "fixed";
    case NoiseMode::kZero: return "zero";
  }
  return "random";
}

NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "random") return NoiseMode::kRandom;
  if (s == "fixed") return NoiseMode::kFixed;
  if (s == "zero") return NoiseMode::kZero;
  throw ConfigError("unknown noise_mode '" + s + "' (expected random, fixed or zero)");
}

void SynthesisConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (base_resolution != 4) throw ConfigError("base_resolution is fixed at 4");
  if (output_resolution < 8 || (output_resolution & (output_resolution - 1)) != 0)
    throw ConfigError("output_resolution must be a power of two >= 8, got " +
                      std::to_string(output_resolution));
  if (mapping_layers < 1) throw ConfigError("mapping_layers must be positive");
  if (mapping_lr_multiplier <= 0) throw ConfigError("mapping_lr_multiplier must be positive");
  for (int r = base_resolution; r <= output_resolution; r *= 2) {
    auto it = channels.find(r);
    if (it == channels.end())
      throw ConfigError("channel schedule has no entry for resolution " + std::to_string(r));
    if (it->second < 1) throw ConfigError("channel counts must be positive");
  }
}

std::vector<int> SynthesisConfig::block_resolutions() const {
  std::vector<int> out;
  for (int r = base_resolution; r <= output_resolution; r *= 2) out.push_back(r);
  return out;
}

std::vector<int> SynthesisConfig::style_input_resolutions() const {
  std::vector<int> out{base_resolution};
  for (int r = base_resolution * 2; r <= output_resolution; r *= 2) {
    out.push_back(r);
    out.push_back(r);
  }
  return out;
}

int SynthesisConfig::channels_at(int resolution) const {
  auto it = channels.find(resolution);
  if (it == channels.end())
    throw ConfigError("channel schedule has no entry for resolution " + std::to_string(resolution));
  return it->second;
}

SynthesisConfig SynthesisConfig::desk() { return SynthesisConfig{}; }

SynthesisConfig SynthesisConfig::full() {
  SynthesisConfig c;
  c.latent_dim = 512;
  c.output_resolution = 256;
  c.channels = {{4, 512}, {8, 512}, {16, 512}, {32, 512}, {64, 512}, {128, 256}, {256, 128}};
  return c;
}

void to_json(nlohmann::json& j, const SynthesisConfig& c) {
  nlohmann::json ch = nlohmann::json::object();
  for (auto [r, n] : c.channels) ch[std::to_string(r)] = n;
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"base_resolution", c.base_resolution},
                     {"output_resolution", c.output_resolution},
                     {"channels", ch},
                     {"mapping_layers", c.mapping_layers},
                     {"mapping_lr_multiplier", c.mapping_lr_multiplier},
                     {"noise_mode", to_string(c.noise_mode)}};
}

void from_json(const nlohmann::json& j, SynthesisConfig& c) {
  c.latent_dim = j.at("latent_dim").get<int>();
  c.base_resolution = j.at("base_resolution").get<int>();
  c.output_resolution = j.at("output_resolution").get<int>();
  c.channels.clear();
  for (auto& [k, v] : j.at("channels").items()) c.channels[std::stoi(k)] = v.get<int>();
  c.mapping_layers = j.at("mapping_layers").get<int>();
  c.mapping_lr_multiplier = j.at("mapping_lr_multiplier").get<double>();
  c.noise_mode = noise_mode_from_string(j.at("noise_mode").get<std::string>());
}

std::int64_t FeatureStack::total_channels() const {
  std::int64_t d = 0;
  for (const auto& t : taps) d += t.tensor.size(1);
  return d;
}

std::string FeatureStack::fingerprint() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (i) os << ';';
    os << taps[i].id << '@' << taps[i].resolution << ':' << taps[i].tensor.size(1);
  }
  return os.str();
}

torch::Tensor normalize_latent(const torch::Tensor& z) {
  return z * torch::rsqrt(z.square().mean(1, /*keepdim=*/true) + 1e-8);
}

MappingNetworkImpl::MappingNetworkImpl(const SynthesisConfig& config) : latent_dim_(config.latent_dim) {
  for (int i = 0; i < config.mapping_layers; ++i) {
    layers_.push_back(register_module("fc" + std::to_string(i),
                                      EqualLinear(config.latent_dim, config.latent_dim, kActivationGain,
                                                  config.mapping_lr_multiplier)));
  }
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  auto x = normalize_latent(z);
  for (auto& layer : layers_) x = lrelu(layer->forward(x));
  return x;
}

StyledConvImpl::StyledConvImpl(int in_channels, int out_channels, int w_dim, bool upsample_input)
    : upsample(upsample_input) {
  affine = register_module("affine", EqualLinear(w_dim, in_channels, 1.0, 1.0, /*bias_init=*/1.0));
  weight = register_parameter("weight", torch::randn({out_channels, in_channels, 3, 3}));
  noise_strength = register_parameter("noise_strength", torch::zeros({1}));
  bias = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor StyledConvImpl::forward(const torch::Tensor& x, const torch::Tensor& w,
                                      const torch::Tensor& noise) {
  auto in = upsample ? upsample_bilinear(x, x.size(-1) * 2) : x;
  auto styles = affine->forward(w);
  auto y = modulated_conv(in, weight, styles, /*demodulate=*/true);
  if (noise.defined()) y = y + noise * noise_strength;
  return lrelu(y + bias.view({1, -1, 1, 1}));
}

ToImageImpl::ToImageImpl(int in_channels, int image_channels, int w_dim) {
  affine = register_module("affine", EqualLinear(w_dim, in_channels, 1.0, 1.0, /*bias_init=*/1.0));
  weight = register_parameter("weight", torch::randn({image_channels, in_channels, 1, 1}));
  bias = register_parameter("bias", torch::zeros({image_channels}));
}

torch::Tensor ToImageImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
  auto styles = affine->forward(w) / std::sqrt(static_cast<double>(weight.size(1)));
  return modulated_conv(x, weight, styles, /*demodulate=*/false) + bias.view({1, -1, 1, 1});
}

SynthesisBlockImpl::SynthesisBlockImpl(int resolution, int in_channels, int out_channels, int w_dim)
    : resolution_(resolution) {
  if (resolution == 4) {
    convs.push_back(register_module("conv0", StyledConv(in_channels, out_channels, w_dim, false)));
  } else {
    convs.push_back(register_module("conv0", StyledConv(in_channels, out_channels, w_dim, true)));
    convs.push_back(register_module("conv1", StyledConv(out_channels, out_channels, w_dim, false)));
  }
  to_vis = register_module("to_vis", ToImage(out_channels, 3, w_dim));
  to_nir = register_module("to_nir", ToImage(out_channels, 1, w_dim));
}

SynthesisNetworkImpl::SynthesisNetworkImpl(const SynthesisConfig& config) : config_(config) {
  config_.validate();
  const int c4 = config_.channels_at(4);
  const_input = register_parameter("const_input", torch::randn({c4, 4, 4}));
  int in_ch = c4;
  for (int r : config_.block_resolutions()) {
    int out_ch = config_.channels_at(r);
    blocks_.push_back(register_module("b" + std::to_string(r),
                                      SynthesisBlock(r, in_ch, out_ch, config_.latent_dim)));
    in_ch = out_ch;
  }
}

torch::Tensor broadcast_styles(const torch::Tensor& ws, int num_style_inputs) {
  if (ws.dim() == 2) return ws.unsqueeze(1).expand({ws.size(0), num_style_inputs, ws.size(1)});
  if (ws.dim() != 3 || ws.size(1) != num_style_inputs)
    throw ConfigError("expected " + std::to_string(num_style_inputs) +
                      " style inputs, got a tensor of shape " + c10::str(ws.sizes()));
  return ws;
}

SynthesisResult SynthesisNetworkImpl::forward(const torch::Tensor& ws_in, NoiseMode noise_mode,
                                              std::uint64_t noise_seed) {
  const int num_styles = config_.num_style_inputs();
  auto ws = broadcast_styles(ws_in, num_styles);
  if (ws.size(2) != config_.latent_dim)
    throw ConfigError("style vectors must have latent_dim entries");
  const auto n = ws.size(0);
  const auto opts = ws.options();

  std::optional<at::Generator> noise_gen;
  if (noise_mode == NoiseMode::kFixed) noise_gen = at::make_generator<at::CPUGeneratorImpl>(noise_seed);
  auto make_noise = [&](std::int64_t res) -> torch::Tensor {
    switch (noise_mode) {
      case NoiseMode::kZero: return {};
      case NoiseMode::kFixed: return torch::randn({n, 1, res, res}, *noise_gen, opts);
      case NoiseMode::kRandom: return torch::randn({n, 1, res, res}, opts);
    }
    return {};
  };

  SynthesisResult result;
  auto x = const_input.unsqueeze(0).expand({n, -1, -1, -1});
  torch::Tensor vis, nir;
  int layer = 0;
  for (auto& block : blocks_) {
    const int res = block->resolution();
    for (int i = 0; i < block->num_convs(); ++i) {
      x = block->convs[i]->forward(x, ws.select(1, layer), make_noise(res));
      result.features.taps.push_back({"b" + std::to_string(res) + "_conv" + std::to_string(i), res, x});
      ++layer;
    }
    // Both branches read the same trunk activation that was just tapped.
    const auto& w_last = ws.select(1, layer - 1);
    auto v = block->to_vis->forward(x, w_last);
    auto m = block->to_nir->forward(x, w_last);
    vis = vis.defined() ? upsample_bilinear(vis, res) + v : v;
    nir = nir.defined() ? upsample_bilinear(nir, res) + m : m;
  }
  result.pair = {vis, nir};
  return result;
}

GeneratorImpl::GeneratorImpl(const SynthesisConfig& config) : config_(config) {
  config_.validate();
  mapping = register_module("mapping", MappingNetwork(config_));
  synthesis = register_module("synthesis", SynthesisNetwork(config_));
}

torch::Tensor GeneratorImpl::map_latent(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != config_.latent_dim)
    throw ConfigError("latent code must be [N, " + std::to_string(config_.latent_dim) + "], got " +
                      c10::str(z.sizes()));
  if (!torch::isfinite(z).all().item<bool>()) throw ConfigError("latent code has non-finite entries");
  return mapping->forward(z);
}

SynthesisResult GeneratorImpl::synthesize(const torch::Tensor& ws, std::uint64_t noise_seed) {
  return synthesis->forward(ws, config_.noise_mode, noise_seed);
}

SynthesisResult GeneratorImpl::synthesize(const torch::Tensor& ws, NoiseMode mode, std::uint64_t noise_seed) {
  return synthesis->forward(ws, mode, noise_seed);
}

SynthesisResult GeneratorImpl::forward(const torch::Tensor& z, std::uint64_t noise_seed) {
  return synthesize(map_latent(z), noise_seed);
}

torch::Tensor style_mix(const torch::Tensor& w_a, const torch::Tensor& w_b, int crossover_resolution,
                        const SynthesisConfig& config) {
  const bool sentinel = crossover_resolution == kCrossoverAllA || crossover_resolution == kCrossoverAllB;
  if (!sentinel && (crossover_resolution < 1 || (crossover_resolution & (crossover_resolution - 1)) != 0))
    throw ConfigError("crossover resolution must be a power of two, got " +
                      std::to_string(crossover_resolution));
  if (w_a.sizes() != w_b.sizes() || w_a.dim() != 2)
    throw ConfigError("style_mix expects two [N, w_dim] tensors of equal shape");
  std::vector<torch::Tensor> per_layer;
  for (int r : config.style_input_resolutions())
    per_layer.push_back(r <= crossover_resolution ? w_a : w_b);
  return torch::stack(per_layer, 1);
}

torch::Tensor sample_latents(std::int64_t count, int latent_dim, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({count, latent_dim}, gen, torch::kFloat32);
}

}  // namespace biocular
