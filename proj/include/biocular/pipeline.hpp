#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "biocular/annotator.hpp"
#include "biocular/config.hpp"
#include "biocular/dataset.hpp"
#include "biocular/metrics.hpp"
#include "biocular/smg.hpp"

namespace biocular {

using LogFn = std::function<void(const std::string&)>;

/// Hypercolumns of the generated image for `seed` paired with `mask`.
AnnotatedSample annotated_sample(Generator& generator, std::uint64_t seed, const SegmentationMask& mask,
                                 int num_classes);

/// Annotated samples for every record of `root` that carries a mask; the
/// features are regenerated from the record seed.
std::vector<AnnotatedSample> annotated_samples_from_dataset(Generator& generator, const std::filesystem::path& root);

/// Scripted annotation of generated seeds base_seed .. base_seed + count - 1:
/// fits the procedural renderer to each pair and writes the pairs with their
/// fitted masks under `out_root`.
DatasetManifest scripted_annotation(Generator& generator, const DatasetManifest& procedural,
                                    std::int64_t count, std::uint64_t base_seed, const std::filesystem::path& out_root,
                                    const FitOptions& fit, const LogFn& log = {});

/// Seeds derived from the run seed for each stage, so stages never share streams.
struct StageSeeds {
  std::uint64_t procedural_train;
  std::uint64_t procedural_test;
  std::uint64_t gan;
  std::uint64_t annotation;
  std::uint64_t triplets;
  std::uint64_t validation;
  std::uint64_t smg;
  std::uint64_t segmenter;
};

StageSeeds stage_seeds(std::uint64_t run_seed);

struct ClosedLoopArm {
  int annotations = 0;
  double smg_training_accuracy = 0;
  MeanStd iou;
  MeanStd f1;
  MeanStd pixel_error;
  std::string manifest_hash;
};

struct ClosedLoopResult {
  std::filesystem::path checkpoint;
  double gan_seconds = 0;
  std::vector<ClosedLoopArm> arms;
};

/// Procedural data -> GAN -> scripted annotations -> SMG -> triplets ->
/// segmenter -> held-out evaluation, once per annotation count. Stage
/// outputs already present under config.paths.work_dir are reused.
ClosedLoopResult run_closed_loop(const RunConfig& config, const std::vector<int>& annotation_counts,
                                 const LogFn& log = {});

}  // namespace biocular
