#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "biocular/image.hpp"

namespace biocular {

using Color = std::array<double, 3>;  // linear RGB in [0, 1]

struct Specular {
  double dx = 0;  // offset from the iris center, fraction of width
  double dy = 0;
  double radius = 0.03;
};

/// Geometry and appearance of one synthetic eye. Lengths are fractions of the
/// image width; the image is square.
struct OcularParams {
  double eye_openness = 0.8;  // (0, 1]
  double eye_center_x = 0.5;
  double eye_center_y = 0.5;
  double eye_half_width = 0.40;
  double iris_radius = 0.18;
  double pupil_ratio = 0.45;  // of iris radius, (0, 1)
  double gaze_dx = 0.0;       // iris center offset from the eye center
  double gaze_dy = 0.0;
  Color iris_hue{0.35, 0.22, 0.12};
  double nir_iris_level = 0.45;
  Color skin_tone{0.75, 0.58, 0.48};
  double nir_skin_level = 0.75;
  Color sclera_tone{0.92, 0.9, 0.88};
  double nir_sclera_level = 0.68;
  double pupil_level = 0.06;
  double nir_pupil_level = 0.05;
  std::optional<Specular> specular;
  double texture = 0.0;  // amplitude of deterministic skin/iris texture; 0 = flat regions
  std::uint32_t texture_seed = 0;

  /// Upper and lower lid heights at the eye center.
  double upper_lid_height() const { return eye_openness * 0.30; }
  double lower_lid_height() const { return eye_openness * 0.22; }
  double iris_center_x() const { return eye_center_x + gaze_dx; }
  double iris_center_y() const { return eye_center_y + gaze_dy; }
  /// Whether (x, y) lies inside the lens-shaped eye opening.
  bool in_opening(double x, double y) const;

  /// pupil strictly inside the iris; iris center inside the eye opening.
  bool valid() const;
};

enum class ClassScheme { kCoarse4, kFine10 };

struct RenderOptions {
  ClassScheme scheme = ClassScheme::kCoarse4;
  /// 3x3 binomial blur on images only; masks stay exact.
  bool smooth = false;
};

struct RenderedSample {
  Image8 vis;  // RGB
  Image8 nir;  // gray
  SegmentationMask mask;
  /// A base class (background, sclera, iris, pupil) has zero area; callers
  /// should draw new parameters.
  bool degenerate = false;
};

/// Draws parameters from fixed uniform ranges. Deterministic per engine state.
OcularParams sample_params(std::mt19937_64& rng);

/// Layered ellipse composition: skin, eye opening (sclera), iris, pupil,
/// optional specular highlight. VIS and NIR share the geometry; the mask is
/// the exact labeling of pixel centers.
RenderedSample render_sample(const OcularParams& params, int resolution, const RenderOptions& options = {});

/// Engine for sample `index` of a dataset seeded with `seed`.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

/// Parameters for sample `index`, redrawn until the render is non-degenerate.
OcularParams sample_valid_params(std::uint64_t seed, std::uint64_t index, int resolution,
                                 const RenderOptions& options = {});

}  // namespace biocular
