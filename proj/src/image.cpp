#include "biocular/image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace biocular {

bool ClassPalette::operator==(const ClassPalette& o) const {
  if (classes.size() != o.classes.size()) return false;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& a = classes[i];
    const auto& b = o.classes[i];
    if (a.id != b.id || a.name != b.name || !(a.color == b.color)) return false;
  }
  return true;
}

ClassPalette ClassPalette::ocular4() {
  return ClassPalette{{{0, "background", {0, 0, 0}},
                       {1, "sclera", {230, 230, 230}},
                       {2, "iris", {40, 160, 60}},
                       {3, "pupil", {200, 40, 40}}}};
}

ClassPalette ClassPalette::ocular10() {
  auto p = ocular4();
  p.classes.push_back({4, "pupil_boundary", {250, 150, 30}});
  p.classes.push_back({5, "iris_boundary", {30, 220, 220}});
  p.classes.push_back({6, "upper_eyelid", {70, 70, 220}});
  p.classes.push_back({7, "lower_eyelid", {160, 60, 200}});
  p.classes.push_back({8, "inner_lower_eyelid", {240, 120, 200}});
  p.classes.push_back({9, "caruncle", {250, 240, 90}});
  return p;
}

void to_json(nlohmann::json& j, const ClassPalette& p) {
  j = nlohmann::json::array();
  for (const auto& c : p.classes)
    j.push_back({{"id", c.id}, {"name", c.name}, {"color", {c.color.r, c.color.g, c.color.b}}});
}

void from_json(const nlohmann::json& j, ClassPalette& p) {
  if (!j.is_array()) throw ConfigError("palette must be a JSON array");
  p.classes.clear();
  for (const auto& e : j) {
    ClassEntry c;
    c.id = e.at("id").get<int>();
    c.name = e.at("name").get<std::string>();
    const auto& col = e.at("color");
    if (!col.is_array() || col.size() != 3) throw ConfigError("palette color must be [r, g, b]");
    c.color = {col[0].get<std::uint8_t>(), col[1].get<std::uint8_t>(), col[2].get<std::uint8_t>()};
    if (c.id != static_cast<int>(p.classes.size()))
      throw ConfigError("palette ids must be consecutive from 0, got " + std::to_string(c.id));
    p.classes.push_back(std::move(c));
  }
}

namespace {

cv::Mat to_mat(const Image8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw InputError("png: only 1- or 3-channel images are supported");
  cv::Mat m(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3,
            const_cast<std::uint8_t*>(image.data.data()));
  if (image.channels == 3) {
    cv::Mat bgr;
    cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
    return bgr;
  }
  return m.clone();
}

Image8 from_mat(const cv::Mat& mat) {
  cv::Mat m = mat;
  if (m.depth() != CV_8U) throw IoError("png: expected 8-bit data");
  if (m.channels() == 4) cv::cvtColor(mat, m, cv::COLOR_BGRA2BGR);
  Image8 out(m.cols, m.rows, m.channels());
  if (m.channels() == 3) {
    cv::Mat rgb;
    cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB);
    m = rgb;
  } else if (m.channels() != 1) {
    throw IoError("png: unsupported channel count");
  }
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::size_t>(m.cols) * m.channels(),
              out.data.begin() + static_cast<std::ptrdiff_t>(y) * m.cols * m.channels());
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat(image), buf)) throw IoError("png: encode failed");
  return buf;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw InputError("png: empty payload");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw InputError("png: payload is not a decodable image");
  return from_mat(m);
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image8 read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const InputError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Image8 mask_to_image(const SegmentationMask& mask) {
  Image8 img(mask.width, mask.height, 1);
  img.data = mask.labels;
  return img;
}

SegmentationMask image_to_mask(const Image8& image) {
  if (image.channels != 1) throw InputError("mask image must be single-channel");
  SegmentationMask m(image.width, image.height);
  m.labels = image.data;
  return m;
}

Image8 colorize_mask(const SegmentationMask& mask, const ClassPalette& palette) {
  Image8 img(mask.width, mask.height, 3);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      int c = mask.at(x, y);
      Rgb col = c < palette.size() ? palette.classes[c].color : Rgb{255, 0, 255};
      img.at(x, y, 0) = col.r;
      img.at(x, y, 1) = col.g;
      img.at(x, y, 2) = col.b;
    }
  return img;
}

torch::Tensor image_to_tensor(const Image8& image) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(image.data.data()),
                            {image.height, image.width, image.channels}, torch::kUInt8)
               .to(torch::kFloat32)
               .permute({2, 0, 1})
               .contiguous();
  return t / 127.5 - 1.0;
}

Image8 tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw InputError("tensor_to_image expects C x H x W");
  auto t = ((chw.detach().to(torch::kFloat32) + 1.0) * 127.5)
               .round()
               .clamp(0, 255)
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  Image8 img(static_cast<int>(chw.size(2)), static_cast<int>(chw.size(1)), static_cast<int>(chw.size(0)));
  std::memcpy(img.data.data(), t.data_ptr<std::uint8_t>(), img.data.size());
  return img;
}

torch::Tensor mask_to_tensor(const SegmentationMask& mask) {
  return torch::from_blob(const_cast<std::uint8_t*>(mask.labels.data()), {mask.height, mask.width},
                          torch::kUInt8)
      .to(torch::kLong);
}

SegmentationMask tensor_to_mask(const torch::Tensor& hw) {
  if (hw.dim() != 2) throw InputError("tensor_to_mask expects H x W");
  auto t = hw.detach().clamp(0, 255).to(torch::kUInt8).contiguous();
  SegmentationMask m(static_cast<int>(hw.size(1)), static_cast<int>(hw.size(0)));
  std::memcpy(m.labels.data(), t.data_ptr<std::uint8_t>(), m.labels.size());
  return m;
}

namespace {

struct CropBox {
  int x0, y0, side;
};

CropBox square_crop(int w, int h) {
  int side = std::min(w, h);
  return {(w - side) / 2, (h - side) / 2, side};
}

}  // namespace

Image8 center_crop_resize(const Image8& image, int resolution) {
  auto box = square_crop(image.width, image.height);
  Image8 out(resolution, resolution, image.channels);
  double scale = static_cast<double>(box.side) / resolution;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      // aligned-corners-off sampling position in source pixel units
      double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, box.side - 1.0);
      double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, box.side - 1.0);
      int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      int x1 = std::min(x0 + 1, box.side - 1), y1 = std::min(y0 + 1, box.side - 1);
      double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        double v = (1 - fy) * ((1 - fx) * image.at(box.x0 + x0, box.y0 + y0, c) +
                               fx * image.at(box.x0 + x1, box.y0 + y0, c)) +
                   fy * ((1 - fx) * image.at(box.x0 + x0, box.y0 + y1, c) +
                         fx * image.at(box.x0 + x1, box.y0 + y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return out;
}

SegmentationMask center_crop_resize(const SegmentationMask& mask, int resolution) {
  auto box = square_crop(mask.width, mask.height);
  SegmentationMask out(resolution, resolution);
  double scale = static_cast<double>(box.side) / resolution;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      int sx = std::min(static_cast<int>((x + 0.5) * scale), box.side - 1);
      int sy = std::min(static_cast<int>((y + 0.5) * scale), box.side - 1);
      out.at(x, y) = mask.at(box.x0 + sx, box.y0 + sy);
    }
  return out;
}

Image8 hconcat(std::span<const Image8> images) {
  if (images.empty()) return {};
  int h = images[0].height, c = images[0].channels, w = 0;
  for (const auto& im : images) {
    if (im.height != h || im.channels != c) throw InputError("hconcat: mismatched shapes");
    w += im.width;
  }
  Image8 out(w, h, c);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int k = 0; k < c; ++k) out.at(x0 + x, y, k) = im.at(x, y, k);
    x0 += im.width;
  }
  return out;
}

Image8 vconcat(std::span<const Image8> images) {
  if (images.empty()) return {};
  int w = images[0].width, c = images[0].channels, h = 0;
  for (const auto& im : images) {
    if (im.width != w || im.channels != c) throw InputError("vconcat: mismatched shapes");
    h += im.height;
  }
  Image8 out(w, h, c);
  std::size_t offset = 0;
  for (const auto& im : images) {
    std::copy(im.data.begin(), im.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += im.data.size();
  }
  return out;
}

Image8 gray_to_rgb(const Image8& gray) {
  if (gray.channels == 3) return gray;
  Image8 out(gray.width, gray.height, 3);
  for (std::size_t i = 0; i < gray.pixel_count(); ++i)
    for (int k = 0; k < 3; ++k) out.data[i * 3 + k] = gray.data[i];
  return out;
}

}  // namespace biocular
