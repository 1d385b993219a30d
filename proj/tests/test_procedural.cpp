#include <gtest/gtest.h>

#include <cmath>

#include "biocular/procedural.hpp"

using namespace biocular;

namespace {

bool same_params(const OcularParams& a, const OcularParams& b) {
  return a.eye_openness == b.eye_openness && a.eye_center_x == b.eye_center_x && a.iris_radius == b.iris_radius &&
         a.pupil_ratio == b.pupil_ratio && a.gaze_dx == b.gaze_dx && a.iris_hue == b.iris_hue &&
         a.skin_tone == b.skin_tone && a.nir_iris_level == b.nir_iris_level &&
         a.specular.has_value() == b.specular.has_value() && a.texture_seed == b.texture_seed;
}

OcularParams flat(OcularParams p) {
  p.specular.reset();
  p.texture = 0.0;
  return p;
}

}  // namespace

TEST(Procedural, SameSeedSameParams) {
  auto a = sample_rng(42, 3);
  auto b = sample_rng(42, 3);
  EXPECT_TRUE(same_params(sample_params(a), sample_params(b)));
  auto c = sample_rng(0, 0);
  auto d = sample_rng(1, 0);
  EXPECT_FALSE(same_params(sample_params(c), sample_params(d)));
}

TEST(Procedural, ThousandDrawsAreValid) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_params(rng);
    ASSERT_TRUE(p.valid()) << "draw " << i;
    EXPECT_GT(p.eye_openness, 0.0);
    EXPECT_LE(p.eye_openness, 1.0);
    EXPECT_GT(p.pupil_ratio, 0.0);
    EXPECT_LT(p.pupil_ratio, 1.0);
    EXPECT_TRUE(p.in_opening(p.iris_center_x(), p.iris_center_y()));
  }
}

TEST(Procedural, InvalidParamsAreFlagged) {
  OcularParams p;
  p.pupil_ratio = 1.0;
  EXPECT_FALSE(p.valid());
  p = OcularParams{};
  p.gaze_dx = 0.6;
  EXPECT_FALSE(p.valid());
}

TEST(Procedural, RenderIsPure) {
  auto p = sample_valid_params(3, 0, 32);
  auto a = render_sample(p, 32);
  auto b = render_sample(p, 32);
  EXPECT_EQ(a.vis.data, b.vis.data);
  EXPECT_EQ(a.nir.data, b.nir.data);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.vis.channels, 3);
  EXPECT_EQ(a.nir.channels, 1);
  EXPECT_EQ(a.mask.width, 32);
}

TEST(Procedural, EveryClassCoversOnePercentAcrossThousandSeeds) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto p = sample_valid_params(seed, 0, 32);
    auto r = render_sample(p, 32);
    ASSERT_FALSE(r.degenerate);
    std::array<int, 4> counts{};
    for (auto l : r.mask.labels) {
      ASSERT_LT(l, 4);
      ++counts[l];
    }
    for (int c = 0; c < 4; ++c) EXPECT_GE(counts[c], 0.01 * 32 * 32) << "seed " << seed << " class " << c;
  }
}

TEST(Procedural, MaskRegionsAreNested) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = sample_valid_params(seed, 0, 32);
    auto r = render_sample(p, 32);
    const double ix = p.iris_center_x(), iy = p.iris_center_y();
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double px = (x + 0.5) / 32.0, py = (y + 0.5) / 32.0;
        const int l = r.mask.at(x, y);
        const double dist = std::hypot(px - ix, py - iy);
        if (l >= 1) {
          EXPECT_TRUE(p.in_opening(px, py));
        }
        if (l >= 2) {
          EXPECT_LE(dist, p.iris_radius);
        }
        if (l == 3) {
          EXPECT_LE(dist, p.iris_radius * p.pupil_ratio);
        }
        if (l == 1) {
          EXPECT_GT(dist, p.iris_radius * 0.999);
        }
      }
  }
}

TEST(Procedural, FlatRenderColorRegionsMatchMaskRegions) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = flat(sample_valid_params(seed, 0, 32));
    auto r = render_sample(p, 32);
    auto same_vis = [&](int x0, int y0, int x1, int y1) {
      for (int c = 0; c < 3; ++c)
        if (r.vis.at(x0, y0, c) != r.vis.at(x1, y1, c)) return false;
      return true;
    };
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        if (x + 1 < 32)
          EXPECT_EQ(r.mask.at(x, y) == r.mask.at(x + 1, y), same_vis(x, y, x + 1, y)) << seed << " " << x << "," << y;
        if (y + 1 < 32)
          EXPECT_EQ(r.mask.at(x, y) == r.mask.at(x, y + 1), same_vis(x, y, x, y + 1)) << seed << " " << x << "," << y;
      }
  }
}

TEST(Procedural, NirSharesGeometryButNotIntensity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = flat(sample_valid_params(seed, 0, 32));
    auto r = render_sample(p, 32);
    bool intensity_differs = false;
    int boundaries = 0, edged = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x + 1 < 32; ++x) {
        const bool boundary = r.mask.at(x, y) != r.mask.at(x + 1, y);
        const bool nir_edge = r.nir.at(x, y) != r.nir.at(x + 1, y);
        // Skin and sclera NIR levels may coincide, so only edges imply boundaries.
        if (nir_edge) {
          EXPECT_TRUE(boundary) << seed << " " << x << "," << y;
        }
        boundaries += boundary;
        edged += boundary && nir_edge;
        const int luma = static_cast<int>(std::lround(0.299 * r.vis.at(x, y, 0) + 0.587 * r.vis.at(x, y, 1) +
                                                      0.114 * r.vis.at(x, y, 2)));
        intensity_differs = intensity_differs || std::abs(luma - r.nir.at(x, y)) > 2;
      }
    EXPECT_TRUE(intensity_differs);
    EXPECT_GE(edged, boundaries / 2) << seed;
  }
}

TEST(Procedural, SmoothingLeavesMaskExact) {
  auto p = sample_valid_params(11, 0, 32);
  auto sharp = render_sample(p, 32);
  auto soft = render_sample(p, 32, {ClassScheme::kCoarse4, true});
  EXPECT_EQ(sharp.mask, soft.mask);
  EXPECT_NE(sharp.vis.data, soft.vis.data);
}

TEST(Procedural, FineSchemeRefinesCoarseScheme) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = sample_valid_params(seed, 0, 32, {ClassScheme::kFine10});
    auto coarse = render_sample(p, 32);
    auto fine = render_sample(p, 32, {ClassScheme::kFine10});
    EXPECT_EQ(coarse.mask.width, fine.mask.width);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int l = fine.mask.at(x, y);
        ASSERT_LT(l, 10);
        if (l < 4) {
          EXPECT_EQ(l, coarse.mask.at(x, y));
          for (int c = 0; c < 3; ++c) {
            EXPECT_EQ(fine.vis.at(x, y, c), coarse.vis.at(x, y, c)) << seed << " " << x << "," << y;
          }
        }
      }
  }
}
