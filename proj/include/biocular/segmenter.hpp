#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "biocular/dataset.hpp"
#include "biocular/discriminator.hpp"
#include "biocular/image.hpp"
#include "biocular/metrics.hpp"

namespace biocular {

struct SegTrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  double lr_decay_factor = 10.0;
  int patience_decay = 5;  // stagnant epochs before the lr is divided
  int patience_stop = 10;  // stagnant epochs before training stops
  int max_epochs = 200;
  int base_width = 24;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SegTrainConfig& c);
void from_json(const nlohmann::json& j, SegTrainConfig& c);

/// Validation-loss plateau rule. The stagnation counter resets only on
/// improvement, so the stop fires patience_stop epochs after the last one.
class PlateauSchedule {
 public:
  enum class Action { kImproved, kStagnant, kDecayed, kStop };

  PlateauSchedule(double learning_rate, double decay_factor, int patience_decay, int patience_stop);

  Action observe(double validation_loss);
  double learning_rate() const { return lr_; }
  int stagnant_epochs() const { return stagnant_; }
  double best() const { return best_; }

 private:
  double lr_;
  double factor_;
  int patience_decay_;
  int patience_stop_;
  int stagnant_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// 4-level encoder-decoder with skip connections; input side must be divisible by 8.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(int in_channels, int num_classes, int base_width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::Sequential> dec_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

struct Segmenter {
  UNet net{nullptr};
  ClassPalette palette;
  Domain modality = Domain::kVis;
  int resolution = 0;
  SegTrainConfig config;

  std::vector<SegmentationMask> predict(const std::vector<Image8>& images);
  void save(const std::filesystem::path& path) const;
  static Segmenter load(const std::filesystem::path& path);
};

struct SegEpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double learning_rate = 0;
  PlateauSchedule::Action action = PlateauSchedule::Action::kImproved;
};

struct SegTrainReport {
  std::vector<SegEpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0;
};

/// Cross-entropy on one modality. An empty validation set falls back to the
/// training loss for the plateau rule. Returns the best-validation weights.
Segmenter train_segmenter(const TripletData& train, const TripletData& val, const ClassPalette& palette,
                          Domain modality, const SegTrainConfig& config, SegTrainReport* report = nullptr,
                          const std::function<void(const SegEpochRecord&)>& on_epoch = {});

/// Loads both manifests, checks palette and resolution agreement, then trains.
Segmenter train_segmenter(const std::filesystem::path& train_root, const std::filesystem::path& val_root,
                          Domain modality, const SegTrainConfig& config, SegTrainReport* report = nullptr,
                          const std::function<void(const SegEpochRecord&)>& on_epoch = {});

/// Per-image metrics; images of another size are center-cropped and resized.
MetricsTable evaluate_segmenter(Segmenter& model, const TripletData& test, const ClassPalette& test_palette,
                                const MetricOptions& options = {});

std::string to_string(PlateauSchedule::Action a);

}  // namespace biocular
