#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "biocular/errors.hpp"

namespace biocular {

/// Interleaved (HWC) image with value semantics.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  T& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

using Image8 = Image<std::uint8_t>;
using ImageF = Image<float>;

/// W x H integer class map. Class ids must stay below the palette size.
struct SegmentationMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  SegmentationMask() = default;
  SegmentationMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return labels.size(); }
  bool operator==(const SegmentationMask&) const = default;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct ClassEntry {
  int id = 0;
  std::string name;
  Rgb color;
};

/// Ordered class list; entry i always has id i.
struct ClassPalette {
  std::vector<ClassEntry> classes;

  int size() const { return static_cast<int>(classes.size()); }
  bool operator==(const ClassPalette& o) const;

  /// background, sclera, iris, pupil
  static ClassPalette ocular4();
  /// ocular4 followed by boundary, eyelid and caruncle classes.
  static ClassPalette ocular10();
};

/// [{"id", "name", "color": [r, g, b]}, ...]; ids must run 0..n-1.
void to_json(nlohmann::json& j, const ClassPalette& p);
void from_json(const nlohmann::json& j, ClassPalette& p);

// PNG codec. Three-channel images are RGB in memory.
std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image8& image);
Image8 read_png(const std::filesystem::path& path);

Image8 mask_to_image(const SegmentationMask& mask);
SegmentationMask image_to_mask(const Image8& image);
/// Palette-colored rendering of a mask, for inspection only.
Image8 colorize_mask(const SegmentationMask& mask, const ClassPalette& palette);

// [-1, 1] float tensors (C x H x W) <-> 8-bit images. Export clamps.
torch::Tensor image_to_tensor(const Image8& image);
Image8 tensor_to_image(const torch::Tensor& chw);
torch::Tensor mask_to_tensor(const SegmentationMask& mask);
SegmentationMask tensor_to_mask(const torch::Tensor& hw);

/// Center-crop to a square, then bilinear resize (nearest for masks).
Image8 center_crop_resize(const Image8& image, int resolution);
SegmentationMask center_crop_resize(const SegmentationMask& mask, int resolution);

/// Horizontal concatenation of equally tall images with a matching channel count.
Image8 hconcat(std::span<const Image8> images);
Image8 vconcat(std::span<const Image8> images);
Image8 gray_to_rgb(const Image8& gray);

}  // namespace biocular
