#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "biocular/image.hpp"

namespace biocular {

struct ClassScore {
  int id = 0;
  bool present = false;  // in gt or pred; absent classes are left out of the means
  std::int64_t pred = 0;
  std::int64_t gt = 0;
  std::int64_t intersection = 0;
  double iou = 0;
  double f1 = 0;
};

struct SegMetrics {
  double iou = 0;
  double f1 = 0;
  double pixel_error = 0;
  std::vector<ClassScore> per_class;
};

struct MetricOptions {
  /// Count class 0 in the macro means. pixel_error is always global.
  bool include_background = true;
};

/// Macro means over classes present in gt or pred. If no counted class is
/// present, iou and f1 are 1.
SegMetrics segmentation_metrics(const SegmentationMask& pred, const SegmentationMask& gt, int num_classes,
                                const MetricOptions& options = {});

struct MeanStd {
  double mean = 0;
  double std = 0;  // population
};

MeanStd mean_std(const std::vector<double>& values);

/// Per-image rows plus mean and std summary rows.
class MetricsTable {
 public:
  void add(const std::string& id, const SegMetrics& m);

  std::size_t size() const { return rows_.size(); }
  MeanStd iou() const;
  MeanStd f1() const;
  MeanStd pixel_error() const;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  /// "IoU 0.812 ± 0.034, F1 ..., pixel error ..."
  std::string summary() const;

 private:
  struct Row {
    std::string id;
    SegMetrics metrics;
  };
  std::vector<Row> rows_;
};

/// Chroma artifact score of a VIS/NIR pair: mean absolute difference of the
/// relative chroma sqrt(Cb'^2 + Cr'^2) / (Y + 16) between the composite of
/// the pair and the composite with NIR replaced by Y(VIS). 0 when the NIR
/// matches the VIS luma.
double alignment_score(const Image8& vis, const Image8& nir);

class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual std::string name() const = 0;
  /// Pseudometric over equally shaped images.
  virtual double distance(const Image8& a, const Image8& b) const = 0;
};

/// Mean over a `levels`-deep 2x2-average pyramid of the RMS difference of
/// [0, 1]-scaled pixels.
class PyramidL2Distance : public PerceptualDistance {
 public:
  explicit PyramidL2Distance(int levels = 3) : levels_(levels) {}
  std::string name() const override { return "pyramid-l2"; }
  double distance(const Image8& a, const Image8& b) const override;

 private:
  int levels_;
};

std::unique_ptr<PerceptualDistance> make_perceptual_distance(const std::string& name);

}  // namespace biocular
