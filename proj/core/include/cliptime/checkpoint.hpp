#pragma once

// Versioned single-file checkpoint.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "CLIPTCKP"
//   u32          format version (currently 1)
//   u64          header length N in bytes
//   N bytes      UTF-8 JSON header
//   payload      float64 little-endian tensors, row-major, back to back
//
// Header keys: format, version, image_size, encoder, model, time_scale
// {t_min, t_max}, vocabulary {file, tokens}, tensors [{name, shape, dtype,
// offset, count}], meta. Offsets are relative to the payload start, so a
// reader needs nothing but this file.

#include <cstdint>
#include <filesystem>
#include <string>

#include "cliptime/model.hpp"
#include "cliptime/training.hpp"

namespace cliptime {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[9] = "CLIPTCKP";

struct CheckpointMeta {
  int epoch = 0;
  std::string kind = "final";  // "final" or "best"
};

struct Checkpoint {
  CLIPTimeModel model;
  TimeScale scale;
  CheckpointMeta meta;
};

/// Writes to `<path>.tmp` then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const CLIPTimeModel& model,
                     const TimeScale& scale, const CheckpointMeta& meta = {});

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cliptime
