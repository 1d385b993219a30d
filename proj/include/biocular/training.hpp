#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "biocular/discriminator.hpp"
#include "biocular/generator.hpp"
#include "biocular/losses.hpp"

namespace biocular {

struct TrainConfig {
  double learning_rate = 0.0025;
  int batch_size = 16;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  double total_kimg = 2500;
  int r1_interval = 16;
  int pl_interval = 8;
  double flip_prob = 0.5;
  double pl_decay = 0.99;
  /// EMA half-life in thousands of images; ema_rampup > 0 caps it at
  /// ema_rampup * images_seen early in training.
  double ema_kimg = 10.0;
  double ema_rampup = 0.05;
  double checkpoint_kimg = 50;
  int log_every = 10;
  double divergence_logit = 50.0;
  int divergence_window = 100;
  /// Overrides for the closed-form regularization weights.
  std::optional<double> gamma1;
  std::optional<double> gamma2;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainState {
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  double pl_mean = 0.0;
  double ema_decay = 0.0;  // decay applied at the most recent step
};

/// Aligned real training pairs: vis [M, 3, R, R], nir [M, 1, R, R] in [-1, 1].
struct BimodalDataset {
  torch::Tensor vis;
  torch::Tensor nir;

  std::int64_t size() const { return vis.defined() ? vis.size(0) : 0; }
  int resolution() const { return vis.defined() ? static_cast<int>(vis.size(-1)) : 0; }
  /// Throws InputError when shapes disagree or the set is empty.
  void validate() const;
};

/// Random batch with horizontal flips applied identically to both modalities.
BimodalPair sample_real_batch(const BimodalDataset& data, int batch_size, double flip_prob, at::Generator& gen);

void set_requires_grad(torch::nn::Module& module, bool flag);
/// ema <- decay * ema + (1 - decay) * model, for every parameter; buffers are copied.
void update_ema(torch::nn::Module& ema, const torch::nn::Module& model, double decay);
void copy_module_state(torch::nn::Module& dst, const torch::nn::Module& src);
/// Decay giving a half-life of `half_life_images` at `batch_size` images per step.
double ema_decay_for(double half_life_images, int batch_size);

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  DiscriminatorLoss d_vis;
  DiscriminatorLoss d_nir;
  GeneratorLoss g;
  double pl_mean = 0;

  nlohmann::json to_json() const;
};

enum class TrainStatus { kCompleted, kDiverged, kStopped };

struct TrainResult {
  TrainStatus status = TrainStatus::kCompleted;
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> last_good_checkpoint;
  std::string message;
};

/// Alternating two-discriminator / generator training with lazy R1 and
/// path-length regularization and an EMA generator.
///
/// Checkpoint archive top-level keys: config, step, g, g_ema, d_vis, d_nir, opt, pl_mean.
class GanTrainer {
 public:
  GanTrainer(const SynthesisConfig& synthesis, const TrainConfig& train, std::uint64_t seed);

  /// One D step (both discriminators, same generated pair) then one G step.
  StepRecord step(const BimodalDataset& data);

  /// Runs until total_kimg; writes checkpoints and newline-delimited progress
  /// records under `out_dir` (progress.ndjson). `on_step` returning false stops early.
  TrainResult train(const BimodalDataset& data, const std::filesystem::path& out_dir,
                    const std::function<bool(const StepRecord&)>& on_step = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  static GanTrainer load_checkpoint(const std::filesystem::path& path);

  const SynthesisConfig& synthesis_config() const { return synthesis_; }
  const TrainConfig& train_config() const { return train_; }
  const TrainState& state() const { return state_; }
  RegularizationGammas gammas() const { return gammas_; }

  Generator& generator() { return g_; }
  Generator& ema_generator() { return g_ema_; }
  Discriminator& discriminator(Domain d) { return d == Domain::kVis ? d_vis_ : d_nir_; }

 private:
  void d_step(const BimodalPair& real, StepRecord& rec);
  void g_step(StepRecord& rec);
  torch::Tensor draw_latents();
  NoiseMode training_noise_mode() const;
  std::uint64_t draw_noise_seed();

  SynthesisConfig synthesis_;
  TrainConfig train_;
  TrainState state_;
  RegularizationGammas gammas_;
  PathLengthState pl_;
  at::Generator rng_;
  Generator g_{nullptr};
  Generator g_ema_{nullptr};
  Discriminator d_vis_{nullptr};
  Discriminator d_nir_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_vis_;
  std::unique_ptr<torch::optim::Adam> opt_d_nir_;
  int logit_streak_ = 0;
};

/// Loads just the EMA generator and its config from a checkpoint.
Generator load_ema_generator(const std::filesystem::path& checkpoint);

}  // namespace biocular
