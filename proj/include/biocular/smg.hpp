#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "biocular/generator.hpp"
#include "biocular/image.hpp"

namespace biocular {

/// Upsamples every tap to `out_resolution` and concatenates along channels in
/// tap order. Returns [N, d, R, R] with d = stack.total_channels().
torch::Tensor extract_hypercolumns(const FeatureStack& stack, int out_resolution);

struct SmgConfig {
  int members = 10;
  int hidden1 = 128;
  int hidden2 = 32;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int patience = 50;    // batches without improvement of the running loss
  int min_epochs = 3;   // early stopping is only considered after this many epochs
  int max_epochs = 100;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  int threads = 1;  // members trained concurrently

  void validate() const;
};

void to_json(nlohmann::json& j, const SmgConfig& c);
void from_json(const nlohmann::json& j, SmgConfig& c);

/// One human (or scripted) annotation on a generated image.
struct AnnotatedSample {
  std::uint64_t seed = 0;
  torch::Tensor features;  // [d, R, R]
  SegmentationMask mask;   // R x R
  int num_classes = 0;
  std::string fingerprint;  // FeatureStack::fingerprint() of the source
};

/// d -> h1 -> h2 -> C with leaky ReLU between layers.
class PixelMlpImpl : public torch::nn::Module {
 public:
  PixelMlpImpl(int in_features, int hidden1, int hidden2, int num_classes);

  torch::Tensor forward(const torch::Tensor& x);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a private generator.
  void reset(std::uint64_t seed);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(PixelMlp);

struct FeatureStats {
  torch::Tensor mean;  // [d]
  torch::Tensor std;   // [d], zeros replaced by one
};

class SmgModel {
 public:
  SmgModel() = default;
  SmgModel(std::vector<PixelMlp> members, FeatureStats stats, ClassPalette palette, std::string tap_fingerprint);

  int num_classes() const { return palette_.size(); }
  int num_members() const { return static_cast<int>(members_.size()); }
  std::int64_t feature_dim() const { return stats_.mean.numel(); }
  const ClassPalette& palette() const { return palette_; }
  const std::string& tap_fingerprint() const { return tap_fingerprint_; }
  const FeatureStats& stats() const { return stats_; }
  std::vector<PixelMlp>& members() { return members_; }

  /// Per-member argmax for pixel features [P, d]: returns [M, P] int64.
  torch::Tensor member_votes(const torch::Tensor& pixel_features) const;
  /// Majority-voted labels for pixel features [P, d]: returns [P] int64.
  torch::Tensor predict_labels(const torch::Tensor& pixel_features) const;
  /// One mask per image in the stack. Throws ConfigError on fingerprint mismatch.
  std::vector<SegmentationMask> predict_masks(const FeatureStack& stack, int resolution) const;

  /// Content hash of parameters, statistics, palette and tap layout.
  std::string fingerprint() const;

  /// Archive keys: members, feature_stats, class_palette, tap_fingerprint, C.
  void save(const std::filesystem::path& path) const;
  static SmgModel load(const std::filesystem::path& path);

 private:
  torch::Tensor standardize(const torch::Tensor& pixel_features) const;

  std::vector<PixelMlp> members_;
  FeatureStats stats_;
  ClassPalette palette_;
  std::string tap_fingerprint_;
};

struct SmgMemberReport {
  int epochs = 0;
  std::int64_t batches = 0;
  double final_running_loss = 0;
  double train_accuracy = 0;
  bool early_stopped = false;
};

struct SmgTrainReport {
  std::vector<SmgMemberReport> members;
  std::vector<int> empty_classes;
  std::vector<std::string> warnings;
  double ensemble_accuracy = 0;
};

/// Trains the ensemble on all annotated pixels. Members differ only by the
/// initialization and batch-order seeds derived from config.seed.
SmgModel train_smg(const std::vector<AnnotatedSample>& samples, const ClassPalette& palette,
                   const SmgConfig& config, SmgTrainReport* report = nullptr);

/// Per-pixel mode over member votes [M, P]; ties go to the lowest class.
torch::Tensor majority_vote(const torch::Tensor& votes, int num_classes);

}  // namespace biocular
