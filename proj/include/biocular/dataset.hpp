#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "biocular/generator.hpp"
#include "biocular/image.hpp"
#include "biocular/procedural.hpp"
#include "biocular/smg.hpp"
#include "biocular/training.hpp"

namespace biocular {

struct TripletRecord {
  std::string id;
  std::uint64_t seed = 0;
  std::string vis_path;   // relative to the dataset root
  std::string nir_path;
  std::string mask_path;  // empty when the record has no mask yet
  std::string checkpoint_fingerprint;
  std::string smg_fingerprint;

  bool operator==(const TripletRecord&) const = default;
};

void to_json(nlohmann::json& j, const TripletRecord& r);
void from_json(const nlohmann::json& j, TripletRecord& r);

/// dataset_root/{manifest.json, images/{id}_vis.png, images/{id}_nir.png, masks/{id}.png}
struct DatasetManifest {
  std::string source;  // "generated", "procedural" or "pairs"
  int resolution = 0;
  ClassPalette palette;
  nlohmann::json config = nlohmann::json::object();
  std::vector<TripletRecord> records;
  std::string content_hash;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

inline constexpr const char* kManifestName = "manifest.json";

/// SHA-256 over the record files sorted by relative path; each file
/// contributes its path, byte length and bytes.
std::string compute_content_hash(const std::filesystem::path& root, const std::vector<TripletRecord>& records);

/// Writes manifest.json (keys sorted) atomically.
void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& root);

std::string record_id(std::uint64_t index);

/// Writes one record's files under `root` and returns the record.
TripletRecord write_record(const std::filesystem::path& root, const std::string& id, std::uint64_t seed,
                           const Image8& vis, const Image8& nir, const SegmentationMask* mask);

/// Relative path of the mask file for `id`.
std::string mask_relpath(const std::string& id);

struct GenerationInfo {
  std::string checkpoint_fingerprint;
  nlohmann::json config = nlohmann::json::object();
};

/// Record i uses seed base_seed + i for both the latent and the fixed noise.
DatasetManifest generate_triplets(Generator& generator, const SmgModel& smg, std::int64_t n, std::uint64_t base_seed,
                                  const std::filesystem::path& root, const GenerationInfo& info = {});

/// Image pairs without masks, for annotation.
DatasetManifest generate_pairs(Generator& generator, std::int64_t n, std::uint64_t base_seed,
                               const std::filesystem::path& root, const ClassPalette& palette,
                               const GenerationInfo& info = {});

/// Procedural renders with exact masks; record i uses sample_valid_params(seed, i).
DatasetManifest write_procedural_dataset(const std::filesystem::path& root, std::int64_t n, std::uint64_t seed,
                                         int resolution, const RenderOptions& options = {});

/// EMA pair and features for one seed, as used by generate_triplets.
SynthesisResult synthesize_seed(Generator& generator, std::uint64_t seed);
/// [C, H, W] tensors of sample i of a pair batch as 8-bit images.
std::pair<Image8, Image8> pair_images(const BimodalPair& pair, std::int64_t index = 0);

struct TripletData {
  std::vector<std::string> ids;
  std::vector<Image8> vis;
  std::vector<Image8> nir;
  std::vector<SegmentationMask> masks;  // empty entries for records without masks
};

/// Loads every record. A nonzero `resolution` applies center-crop + resize
/// to records of another size.
TripletData load_triplets(const std::filesystem::path& root, const DatasetManifest& manifest, int resolution = 0);

BimodalDataset to_bimodal_dataset(const TripletData& data);

/// BT.601 full-range luma, rounded.
Image8 luma(const Image8& vis);

/// VIS to YCbCr, Y replaced by NIR, back to RGB with clamping.
Image8 composite_alignment_image(const Image8& vis, const Image8& nir);

struct NearestSample {
  std::int64_t index = -1;
  double mse = 0;
};

/// Argmin of pixel-wise MSE between `query` and each `set[i]`; ties go to the
/// lowest index. Tensors are compared as given (set is [N, ...query shape]).
NearestSample nearest_training_sample(const torch::Tensor& query, const torch::Tensor& set);
/// Same over 8-bit images with values scaled to [0, 1].
NearestSample nearest_training_sample(const Image8& query, std::span<const Image8> set);

}  // namespace biocular
