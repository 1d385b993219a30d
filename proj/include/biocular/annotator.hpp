#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "biocular/dataset.hpp"
#include "biocular/procedural.hpp"

namespace biocular {

/// Scripted stand-in for a human annotator: fits renderer parameters to a
/// generated pair and returns the exact mask of the fitted render.
struct ProceduralFit {
  OcularParams params;
  SegmentationMask mask;
  double mse = 0;  // mean over VIS and NIR pixels in [0, 1] units
  std::int64_t init_index = -1;
};

struct FitOptions {
  RenderOptions render;
  int iterations = 400;
  std::uint64_t seed = 0;
};

/// Starts from the best of `candidates` and refines by random local search.
ProceduralFit fit_procedural_annotation(const Image8& vis, const Image8& nir, std::span<const OcularParams> candidates,
                                        const FitOptions& options = {});

/// Parameters of every record of a procedural dataset, re-derived from its seed.
std::vector<OcularParams> procedural_params(const DatasetManifest& manifest);

}  // namespace biocular
