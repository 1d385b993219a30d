#include "biocular/procedural.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace biocular {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

Color hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  Color rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

/// Sum of a few oriented sinusoids; deterministic in the seed, roughly in [-1, 1].
class Texture {
 public:
  explicit Texture(std::uint32_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& w : waves_) {
      const double theta = uniform(rng, 0, std::numbers::pi);
      const double freq = uniform(rng, 12, 40);
      w = {freq * std::cos(theta), freq * std::sin(theta), uniform(rng, 0, 2 * std::numbers::pi)};
    }
    spokes_ = static_cast<int>(uniform(rng, 10, 24));
    spoke_phase_ = uniform(rng, 0, 2 * std::numbers::pi);
  }

  double planar(double u, double v) const {
    double s = 0;
    for (const auto& w : waves_) s += std::sin(w[0] * u + w[1] * v + w[2]);
    return s / static_cast<double>(waves_.size());
  }

  double radial(double angle, double r_norm) const {
    return 0.7 * std::sin(spokes_ * angle + spoke_phase_) * (0.5 + 0.5 * r_norm) + 0.3 * std::cos(9.0 * r_norm);
  }

 private:
  std::array<std::array<double, 3>, 4> waves_{};
  int spokes_ = 16;
  double spoke_phase_ = 0;
};

Image8 smooth_image(const Image8& img) {
  Image8 out(img.width, img.height, img.channels);
  static constexpr int k[3] = {1, 2, 1};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        int acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = std::clamp(x + dx, 0, img.width - 1);
            const int sy = std::clamp(y + dy, 0, img.height - 1);
            acc += k[dx + 1] * k[dy + 1] * img.at(sx, sy, c);
          }
        out.at(x, y, c) = static_cast<std::uint8_t>((acc + 8) / 16);
      }
  return out;
}

enum Fine : std::uint8_t {
  kBackground = 0,
  kSclera = 1,
  kIris = 2,
  kPupil = 3,
  kPupilBoundary = 4,
  kIrisBoundary = 5,
  kUpperEyelid = 6,
  kLowerEyelid = 7,
  kInnerLowerEyelid = 8,
  kCaruncle = 9,
};

}  // namespace

bool OcularParams::in_opening(double x, double y) const {
  const double t = (x - eye_center_x) / eye_half_width;
  if (std::abs(t) >= 1.0) return false;
  const double shape = 1.0 - t * t;
  return y > eye_center_y - upper_lid_height() * shape && y < eye_center_y + lower_lid_height() * shape;
}

bool OcularParams::valid() const {
  return eye_openness > 0 && eye_openness <= 1 && iris_radius > 0 && pupil_ratio > 0 && pupil_ratio < 1 &&
         eye_half_width > 0 && in_opening(iris_center_x(), iris_center_y());
}

OcularParams sample_params(std::mt19937_64& rng) {
  OcularParams p;
  p.eye_openness = uniform(rng, 0.6, 1.0);
  p.eye_center_x = uniform(rng, 0.47, 0.53);
  p.eye_center_y = uniform(rng, 0.47, 0.53);
  p.eye_half_width = uniform(rng, 0.36, 0.44);
  p.iris_radius = uniform(rng, 0.16, 0.20);
  p.pupil_ratio = uniform(rng, 0.42, 0.58);
  p.gaze_dx = uniform(rng, -0.08, 0.08);
  p.gaze_dy = uniform(rng, -0.03, 0.03);
  const double hue = uniform(rng, 0, 1);
  const double sat = uniform(rng, 0.4, 0.8);
  const double val = uniform(rng, 0.2, 0.45);
  p.iris_hue = hsv_to_rgb(hue, sat, val);
  p.nir_iris_level = uniform(rng, 0.3, 0.55);
  const double skin_r = uniform(rng, 0.55, 0.85);
  p.skin_tone = {skin_r, skin_r * uniform(rng, 0.7, 0.85), skin_r * uniform(rng, 0.55, 0.75)};
  p.nir_skin_level = uniform(rng, 0.6, 0.85);
  const double sclera = uniform(rng, 0.85, 0.95);
  p.sclera_tone = {sclera, sclera * uniform(rng, 0.97, 1.0), sclera * uniform(rng, 0.93, 0.98)};
  p.nir_sclera_level = uniform(rng, 0.55, 0.75);
  p.pupil_level = uniform(rng, 0.03, 0.1);
  p.nir_pupil_level = uniform(rng, 0.02, 0.08);
  if (uniform(rng, 0, 1) < 0.5) {
    p.specular = Specular{uniform(rng, -0.5, 0.5) * p.iris_radius, uniform(rng, -0.5, 0.5) * p.iris_radius,
                          uniform(rng, 0.02, 0.035)};
  }
  p.texture = uniform(rng, 0.02, 0.08);
  p.texture_seed = static_cast<std::uint32_t>(rng());
  return p;
}

RenderedSample render_sample(const OcularParams& p, int resolution, const RenderOptions& options) {
  RenderedSample out;
  out.vis = Image8(resolution, resolution, 3);
  out.nir = Image8(resolution, resolution, 1);
  out.mask = SegmentationMask(resolution, resolution);
  const Texture tex(p.texture_seed);
  const double px = 1.0 / resolution;
  const double ix = p.iris_center_x(), iy = p.iris_center_y();
  const double pupil_r = p.iris_radius * p.pupil_ratio;
  const bool fine = options.scheme == ClassScheme::kFine10;
  std::array<std::size_t, 4> base_counts{};

  for (int yi = 0; yi < resolution; ++yi) {
    for (int xi = 0; xi < resolution; ++xi) {
      const double u = (xi + 0.5) * px, v = (yi + 0.5) * px;
      const double t = (u - p.eye_center_x) / p.eye_half_width;
      const double shape = std::max(0.0, 1.0 - t * t);
      const double upper = p.eye_center_y - p.upper_lid_height() * shape;
      const double lower = p.eye_center_y + p.lower_lid_height() * shape;
      const bool opening = p.in_opening(u, v);
      const double dist = std::hypot(u - ix, v - iy);

      std::uint8_t base = kBackground;
      if (opening) base = dist < pupil_r ? kPupil : (dist < p.iris_radius ? kIris : kSclera);
      ++base_counts[base];

      const double skin_mod = 1.0 + p.texture * tex.planar(u, v);
      const double iris_mod = 1.0 + 2.0 * p.texture * tex.radial(std::atan2(v - iy, u - ix), dist / p.iris_radius);
      Color vis{};
      double nir = 0;
      switch (base) {
        case kBackground:
          for (int c = 0; c < 3; ++c) vis[c] = p.skin_tone[c] * skin_mod;
          nir = p.nir_skin_level * skin_mod;
          break;
        case kSclera:
          vis = p.sclera_tone;
          nir = p.nir_sclera_level;
          break;
        case kIris:
          for (int c = 0; c < 3; ++c) vis[c] = p.iris_hue[c] * iris_mod;
          nir = p.nir_iris_level * (1.0 + 2.5 * p.texture * tex.radial(std::atan2(v - iy, u - ix), dist / p.iris_radius));
          break;
        default:
          vis = {p.pupil_level, p.pupil_level, p.pupil_level};
          nir = p.nir_pupil_level;
          break;
      }

      std::uint8_t label = base;
      if (fine) {
        const bool lid_span = std::abs(t) < 1.08;
        if (opening) {
          if (base == kSclera && t < -0.78) {
            label = kCaruncle;
            vis = {0.85, 0.55, 0.55};
            nir = p.nir_sclera_level * 0.85;
          } else if (base == kSclera && v > lower - 1.5 * px) {
            label = kInnerLowerEyelid;
            vis = {0.78, 0.5, 0.48};
            nir = p.nir_skin_level * 0.8;
          }
          if (std::abs(dist - pupil_r) < px) label = kPupilBoundary;
          else if (std::abs(dist - p.iris_radius) < px) label = kIrisBoundary;
        } else if (lid_span && v <= upper && v > upper - 0.07) {
          label = kUpperEyelid;
          for (int c = 0; c < 3; ++c) vis[c] *= 0.82;
          nir *= 0.9;
        } else if (lid_span && v >= lower && v < lower + 0.045) {
          label = kLowerEyelid;
          for (int c = 0; c < 3; ++c) vis[c] *= 0.9;
          nir *= 0.93;
        }
      }

      if (p.specular && opening &&
          std::hypot(u - (ix + p.specular->dx), v - (iy + p.specular->dy)) < p.specular->radius) {
        vis = {0.98, 0.98, 0.98};
        nir = 0.97;
      }

      for (int c = 0; c < 3; ++c) out.vis.at(xi, yi, c) = to_u8(vis[c]);
      out.nir.at(xi, yi) = to_u8(nir);
      out.mask.at(xi, yi) = label;
    }
  }
  out.degenerate = std::any_of(base_counts.begin(), base_counts.end(), [](std::size_t n) { return n == 0; });
  if (options.smooth) {
    out.vis = smooth_image(out.vis);
    out.nir = smooth_image(out.nir);
  }
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

OcularParams sample_valid_params(std::uint64_t seed, std::uint64_t index, int resolution,
                                 const RenderOptions& options) {
  auto rng = sample_rng(seed, index);
  for (;;) {
    auto p = sample_params(rng);
    if (p.valid() && !render_sample(p, resolution, options).degenerate) return p;
  }
}

}  // namespace biocular
