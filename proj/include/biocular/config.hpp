#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "biocular/generator.hpp"
#include "biocular/segmenter.hpp"
#include "biocular/smg.hpp"
#include "biocular/training.hpp"

namespace biocular {

struct DataConfig {
  std::int64_t procedural_count = 2000;  // GAN training pairs
  std::string scheme = "coarse4";        // or "fine10"
  bool smooth = false;
  std::int64_t annotations = 8;
  std::int64_t triplets = 1000;
  std::int64_t validation = 100;
  std::int64_t holdout = 200;
  int annotator_iterations = 400;

  RenderOptions render_options() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct PathsConfig {
  std::string work_dir = "run";

  bool operator==(const PathsConfig&) const = default;
};

void to_json(nlohmann::json& j, const PathsConfig& c);
void from_json(const nlohmann::json& j, PathsConfig& c);

/// Sections: [run] seed, [synthesis], [train], [smg], [segmenter], [data], [paths].
struct RunConfig {
  std::uint64_t seed = 0;
  SynthesisConfig synthesis = SynthesisConfig::desk();
  TrainConfig train;
  SmgConfig smg;
  SegTrainConfig segmenter;
  DataConfig data;
  PathsConfig paths;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Minimal TOML subset: [section] headers, `key = value` with strings,
/// integers, floats, booleans, flat arrays and one-level inline tables;
/// `#` comments. Returns {section: {key: value}}; top-level keys land in "".
nlohmann::json parse_toml(const std::string& text, const std::string& origin = "<config>");

/// Unknown sections or keys, and values of the wrong type, are ConfigErrors.
RunConfig run_config_from_toml(const std::string& text, const std::string& origin = "<config>");
/// IoError when the file is missing.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace biocular
