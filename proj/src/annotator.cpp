#include "biocular/annotator.hpp"

#include <random>

#include "biocular/errors.hpp"

namespace biocular {

namespace {

double render_mse(const OcularParams& p, const Image8& vis, const Image8& nir, const RenderOptions& options) {
  const auto r = render_sample(p, vis.width, options);
  double acc = 0;
  for (std::size_t i = 0; i < vis.data.size(); ++i) {
    const double d = (static_cast<double>(r.vis.data[i]) - vis.data[i]) / 255.0;
    acc += d * d;
  }
  for (std::size_t i = 0; i < nir.data.size(); ++i) {
    const double d = (static_cast<double>(r.nir.data[i]) - nir.data[i]) / 255.0;
    acc += d * d;
  }
  return acc / static_cast<double>(vis.data.size() + nir.data.size());
}

OcularParams perturb(const OcularParams& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  auto q = p;
  q.eye_openness = std::clamp(q.eye_openness + 2 * n(rng), 0.3, 1.0);
  q.eye_center_x += n(rng) * 0.3;
  q.eye_center_y += n(rng) * 0.3;
  q.eye_half_width = std::clamp(q.eye_half_width + n(rng) * 0.5, 0.25, 0.5);
  q.iris_radius = std::clamp(q.iris_radius + n(rng) * 0.3, 0.08, 0.3);
  q.pupil_ratio = std::clamp(q.pupil_ratio + n(rng), 0.2, 0.8);
  q.gaze_dx += n(rng) * 0.3;
  q.gaze_dy += n(rng) * 0.3;
  for (int c = 0; c < 3; ++c) {
    q.iris_hue[c] = std::clamp(q.iris_hue[c] + n(rng), 0.0, 1.0);
    q.skin_tone[c] = std::clamp(q.skin_tone[c] + n(rng), 0.0, 1.0);
    q.sclera_tone[c] = std::clamp(q.sclera_tone[c] + n(rng), 0.0, 1.0);
  }
  q.nir_iris_level = std::clamp(q.nir_iris_level + n(rng), 0.0, 1.0);
  q.nir_skin_level = std::clamp(q.nir_skin_level + n(rng), 0.0, 1.0);
  q.nir_sclera_level = std::clamp(q.nir_sclera_level + n(rng), 0.0, 1.0);
  q.pupil_level = std::clamp(q.pupil_level + n(rng), 0.0, 1.0);
  q.nir_pupil_level = std::clamp(q.nir_pupil_level + n(rng), 0.0, 1.0);
  return q;
}

}  // namespace

ProceduralFit fit_procedural_annotation(const Image8& vis, const Image8& nir, std::span<const OcularParams> candidates,
                                        const FitOptions& options) {
  if (candidates.empty()) throw InputError("fit_procedural_annotation: no candidate parameters");
  if (vis.channels != 3 || nir.channels != 1 || vis.width != nir.width || vis.height != nir.height ||
      vis.width != vis.height)
    throw InputError("fit_procedural_annotation: expected square RGB VIS and gray NIR of one size");
  ProceduralFit best;
  best.mse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double e = render_mse(candidates[i], vis, nir, options.render);
    if (e < best.mse) {
      best.mse = e;
      best.params = candidates[i];
      best.init_index = static_cast<std::int64_t>(i);
    }
  }
  std::mt19937_64 rng(options.seed);
  for (int it = 0; it < options.iterations; ++it) {
    const double scale = 0.02 * (1.0 - 0.8 * it / std::max(1, options.iterations));
    const auto q = perturb(best.params, rng, scale);
    if (!q.valid()) continue;
    const double e = render_mse(q, vis, nir, options.render);
    if (e < best.mse) {
      best.mse = e;
      best.params = q;
    }
  }
  best.mask = render_sample(best.params, vis.width, options.render).mask;
  return best;
}

std::vector<OcularParams> procedural_params(const DatasetManifest& manifest) {
  if (manifest.source != "procedural") throw InputError("procedural_params: dataset is not procedural");
  RenderOptions options;
  options.scheme = manifest.config.value("scheme", std::string("coarse4")) == "fine10" ? ClassScheme::kFine10
                                                                                       : ClassScheme::kCoarse4;
  options.smooth = manifest.config.value("smooth", false);
  const auto seed = manifest.config.at("seed").get<std::uint64_t>();
  std::vector<OcularParams> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records)
    out.push_back(sample_valid_params(seed, r.seed, manifest.resolution, options));
  return out;
}

}  // namespace biocular
