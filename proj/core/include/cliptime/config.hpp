#pragma once

#include <filesystem>
#include <string_view>

#include "cliptime/encoders.hpp"
#include "cliptime/heads.hpp"
#include "cliptime/synthgen.hpp"
#include "cliptime/training.hpp"

namespace cliptime {

struct PathsConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "runs/default";
};

/// Everything the CLI needs, loaded from one YAML file with sections
/// gen, encoder, model, train, paths. Every key is optional; unknown keys
/// are rejected.
struct PipelineConfig {
  GenConfig gen;
  EncoderConfig encoder;
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;

  void validate() const;
  /// Sets both the generator and training seeds.
  void override_seed(std::uint64_t seed);
};

/// Parses YAML text. Relative paths are resolved against `base_dir`.
/// Errors are ConfigError messages of the form "<source>:<line>: ...".
PipelineConfig parse_config(std::string_view yaml, const std::filesystem::path& base_dir,
                            std::string_view source = "<config>");

PipelineConfig load_config(const std::filesystem::path& path);

/// Serializes back to YAML with every key present.
std::string dump_config(const PipelineConfig& cfg);

}  // namespace cliptime
