#include "biocular/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "biocular/errors.hpp"
#include "biocular/hash.hpp"

namespace biocular {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const TripletRecord& r) {
  j = {{"id", r.id},
       {"seed", r.seed},
       {"vis", r.vis_path},
       {"nir", r.nir_path},
       {"mask", r.mask_path},
       {"checkpoint_fingerprint", r.checkpoint_fingerprint},
       {"smg_fingerprint", r.smg_fingerprint}};
}

void from_json(const nlohmann::json& j, TripletRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.vis_path = j.at("vis").get<std::string>();
  r.nir_path = j.at("nir").get<std::string>();
  r.mask_path = j.value("mask", std::string{});
  r.checkpoint_fingerprint = j.value("checkpoint_fingerprint", std::string{});
  r.smg_fingerprint = j.value("smg_fingerprint", std::string{});
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"source", m.source},   {"resolution", m.resolution}, {"palette", m.palette},
       {"config", m.config},   {"records", m.records},       {"content_hash", m.content_hash}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.source = j.at("source").get<std::string>();
  m.resolution = j.at("resolution").get<int>();
  m.palette = j.at("palette").get<ClassPalette>();
  m.config = j.value("config", nlohmann::json::object());
  m.records = j.at("records").get<std::vector<TripletRecord>>();
  m.content_hash = j.value("content_hash", std::string{});
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void prepare_root(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks"))
    throw IoError("cannot create dataset directories under " + root.string());
}

DatasetManifest finish(const fs::path& root, DatasetManifest m) {
  m.content_hash = compute_content_hash(root, m.records);
  write_manifest(root, m);
  return m;
}

}  // namespace

std::string compute_content_hash(const fs::path& root, const std::vector<TripletRecord>& records) {
  std::vector<std::string> files;
  for (const auto& r : records) {
    files.push_back(r.vis_path);
    files.push_back(r.nir_path);
    if (!r.mask_path.empty()) files.push_back(r.mask_path);
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    const auto bytes = read_bytes(root / f);
    h.update(f);
    h.update(std::string(1, '\0'));
    const std::uint64_t len = bytes.size();
    h.update(&len, sizeof(len));
    h.update(bytes);
  }
  return h.hex_digest();
}

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
  const auto text = nlohmann::json(manifest).dump(2) + "\n";
  write_bytes_atomic(root / kManifestName,
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetManifest read_manifest(const fs::path& root) {
  const auto path = root / kManifestName;
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
    return j.get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::string record_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}

std::string mask_relpath(const std::string& id) { return "masks/" + id + ".png"; }

TripletRecord write_record(const fs::path& root, const std::string& id, std::uint64_t seed, const Image8& vis,
                           const Image8& nir, const SegmentationMask* mask) {
  if (vis.channels != 3 || nir.channels != 1 || vis.width != nir.width || vis.height != nir.height)
    throw InputError("record " + id + ": VIS must be RGB and NIR gray of the same size");
  TripletRecord r;
  r.id = id;
  r.seed = seed;
  r.vis_path = "images/" + id + "_vis.png";
  r.nir_path = "images/" + id + "_nir.png";
  write_bytes_atomic(root / r.vis_path, encode_png(vis));
  write_bytes_atomic(root / r.nir_path, encode_png(nir));
  if (mask) {
    if (mask->width != vis.width || mask->height != vis.height)
      throw InputError("record " + id + ": mask size differs from the images");
    r.mask_path = mask_relpath(id);
    write_bytes_atomic(root / r.mask_path, encode_png(mask_to_image(*mask)));
  }
  return r;
}

SynthesisResult synthesize_seed(Generator& generator, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto z = sample_latents(1, generator->config().latent_dim, seed);
  return generator->synthesize(generator->map_latent(z), NoiseMode::kFixed, seed);
}

std::pair<Image8, Image8> pair_images(const BimodalPair& pair, std::int64_t index) {
  return {tensor_to_image(pair.vis[index]), tensor_to_image(pair.nir[index])};
}

DatasetManifest generate_triplets(Generator& generator, const SmgModel& smg, std::int64_t n, std::uint64_t base_seed,
                                  const fs::path& root, const GenerationInfo& info) {
  if (n < 0) throw ConfigError("generate_triplets: n must be non-negative");
  const int res = generator->config().output_resolution;
  const auto probe = synthesize_seed(generator, base_seed);
  if (probe.features.fingerprint() != smg.tap_fingerprint())
    throw ConfigError("generate_triplets: SMG was trained on tap layout '" + smg.tap_fingerprint() +
                      "' but the generator produces '" + probe.features.fingerprint() + "'");
  prepare_root(root);
  DatasetManifest m;
  m.source = "generated";
  m.resolution = res;
  m.palette = smg.palette();
  m.config = info.config;
  const auto smg_fp = smg.fingerprint();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto seed = base_seed + static_cast<std::uint64_t>(i);
    const auto result = i == 0 ? probe : synthesize_seed(generator, seed);
    const auto mask = smg.predict_masks(result.features, res).front();
    auto [vis, nir] = pair_images(result.pair);
    auto rec = write_record(root, record_id(static_cast<std::uint64_t>(i)), seed, vis, nir, &mask);
    rec.checkpoint_fingerprint = info.checkpoint_fingerprint;
    rec.smg_fingerprint = smg_fp;
    m.records.push_back(std::move(rec));
  }
  return finish(root, std::move(m));
}

DatasetManifest generate_pairs(Generator& generator, std::int64_t n, std::uint64_t base_seed, const fs::path& root,
                               const ClassPalette& palette, const GenerationInfo& info) {
  if (n < 0) throw ConfigError("generate_pairs: n must be non-negative");
  prepare_root(root);
  DatasetManifest m;
  m.source = "pairs";
  m.resolution = generator->config().output_resolution;
  m.palette = palette;
  m.config = info.config;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto seed = base_seed + static_cast<std::uint64_t>(i);
    auto [vis, nir] = pair_images(synthesize_seed(generator, seed).pair);
    auto rec = write_record(root, record_id(static_cast<std::uint64_t>(i)), seed, vis, nir, nullptr);
    rec.checkpoint_fingerprint = info.checkpoint_fingerprint;
    m.records.push_back(std::move(rec));
  }
  return finish(root, std::move(m));
}

DatasetManifest write_procedural_dataset(const fs::path& root, std::int64_t n, std::uint64_t seed, int resolution,
                                         const RenderOptions& options) {
  if (n < 0) throw ConfigError("write_procedural_dataset: n must be non-negative");
  if (resolution < 8) throw ConfigError("write_procedural_dataset: resolution must be >= 8");
  prepare_root(root);
  DatasetManifest m;
  m.source = "procedural";
  m.resolution = resolution;
  m.palette = options.scheme == ClassScheme::kFine10 ? ClassPalette::ocular10() : ClassPalette::ocular4();
  m.config = {{"seed", seed},
              {"scheme", options.scheme == ClassScheme::kFine10 ? "fine10" : "coarse4"},
              {"smooth", options.smooth}};
  for (std::int64_t i = 0; i < n; ++i) {
    const auto params = sample_valid_params(seed, static_cast<std::uint64_t>(i), resolution, options);
    const auto s = render_sample(params, resolution, options);
    m.records.push_back(write_record(root, record_id(static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(i),
                                     s.vis, s.nir, &s.mask));
  }
  return finish(root, std::move(m));
}

TripletData load_triplets(const fs::path& root, const DatasetManifest& manifest, int resolution) {
  TripletData out;
  for (const auto& r : manifest.records) {
    auto vis = read_png(root / r.vis_path);
    auto nir = read_png(root / r.nir_path);
    if (vis.channels != 3 || nir.channels != 1 || vis.width != nir.width || vis.height != nir.height)
      throw InputError("record " + r.id + ": image files disagree in shape or channel count");
    SegmentationMask mask;
    if (!r.mask_path.empty()) {
      mask = image_to_mask(read_png(root / r.mask_path));
      if (mask.width != vis.width || mask.height != vis.height)
        throw InputError("record " + r.id + ": mask size differs from the images");
      for (auto l : mask.labels)
        if (l >= manifest.palette.size())
          throw InputError("record " + r.id + ": mask class " + std::to_string(l) + " outside the palette");
    }
    if (resolution > 0 && (vis.width != resolution || vis.height != resolution)) {
      vis = center_crop_resize(vis, resolution);
      nir = center_crop_resize(nir, resolution);
      if (!r.mask_path.empty()) mask = center_crop_resize(mask, resolution);
    }
    out.ids.push_back(r.id);
    out.vis.push_back(std::move(vis));
    out.nir.push_back(std::move(nir));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

BimodalDataset to_bimodal_dataset(const TripletData& data) {
  if (data.vis.empty()) throw InputError("to_bimodal_dataset: no records");
  std::vector<torch::Tensor> vis, nir;
  for (std::size_t i = 0; i < data.vis.size(); ++i) {
    vis.push_back(image_to_tensor(data.vis[i]));
    nir.push_back(image_to_tensor(data.nir[i]));
  }
  BimodalDataset ds{torch::stack(vis), torch::stack(nir)};
  ds.validate();
  return ds;
}

namespace {

struct YCbCr {
  double y, cb, cr;
};

YCbCr to_ycbcr(double r, double g, double b) {
  return {0.299 * r + 0.587 * g + 0.114 * b, 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
          128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b};
}

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image8 luma(const Image8& vis) {
  if (vis.channels != 3) throw InputError("luma: expected an RGB image");
  Image8 out(vis.width, vis.height, 1);
  for (int y = 0; y < vis.height; ++y)
    for (int x = 0; x < vis.width; ++x)
      out.at(x, y) = clamp_u8(to_ycbcr(vis.at(x, y, 0), vis.at(x, y, 1), vis.at(x, y, 2)).y);
  return out;
}

Image8 composite_alignment_image(const Image8& vis, const Image8& nir) {
  if (vis.channels != 3 || nir.channels != 1 || vis.width != nir.width || vis.height != nir.height)
    throw InputError("composite: expected RGB VIS and gray NIR of the same size");
  Image8 out(vis.width, vis.height, 3);
  for (int y = 0; y < vis.height; ++y)
    for (int x = 0; x < vis.width; ++x) {
      const auto c = to_ycbcr(vis.at(x, y, 0), vis.at(x, y, 1), vis.at(x, y, 2));
      const double l = nir.at(x, y);
      out.at(x, y, 0) = clamp_u8(l + 1.402 * (c.cr - 128.0));
      out.at(x, y, 1) = clamp_u8(l - 0.344136 * (c.cb - 128.0) - 0.714136 * (c.cr - 128.0));
      out.at(x, y, 2) = clamp_u8(l + 1.772 * (c.cb - 128.0));
    }
  return out;
}

NearestSample nearest_training_sample(const torch::Tensor& query, const torch::Tensor& set) {
  if (!set.defined() || set.dim() == 0 || set.size(0) == 0) throw InputError("nearest_training_sample: empty set");
  if (set[0].sizes() != query.sizes()) throw InputError("nearest_training_sample: shape mismatch");
  auto diff = set.to(torch::kFloat64) - query.to(torch::kFloat64).unsqueeze(0);
  auto mse = diff.square().flatten(1).mean(1);
  // argmin returns the first minimum.
  const auto idx = mse.argmin().item<std::int64_t>();
  return {idx, mse[idx].item<double>()};
}

NearestSample nearest_training_sample(const Image8& query, std::span<const Image8> set) {
  if (set.empty()) throw InputError("nearest_training_sample: empty set");
  NearestSample best;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set[i].same_shape(query)) throw InputError("nearest_training_sample: shape mismatch");
    double acc = 0;
    for (std::size_t k = 0; k < query.data.size(); ++k) {
      const double d = (static_cast<double>(set[i].data[k]) - query.data[k]) / 255.0;
      acc += d * d;
    }
    const double mse = query.data.empty() ? 0.0 : acc / static_cast<double>(query.data.size());
    if (best.index < 0 || mse < best.mse) best = {static_cast<std::int64_t>(i), mse};
  }
  return best;
}

}  // namespace biocular
