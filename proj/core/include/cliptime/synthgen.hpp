#pragma once

// Deterministic generator for the time-aligned synthetic fungal growth
// dataset: rendered images, stage labels, timestamps and text descriptions.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cliptime/common.hpp"
#include "cliptime/image.hpp"

namespace cliptime {

/// Growth stage. The index mapping is fixed: spore=0, hyphae=1, mycelium=2.
enum class StageLabel : int { kSpore = 0, kHyphae = 1, kMycelium = 2 };

inline constexpr int kNumStages = 3;
inline constexpr std::array<StageLabel, kNumStages> kAllStages = {
    StageLabel::kSpore, StageLabel::kHyphae, StageLabel::kMycelium};

std::string_view stage_name(StageLabel stage) noexcept;
StageLabel stage_from_index(int index);  // throws RangeError
StageLabel stage_from_name(std::string_view name);
constexpr int stage_index(StageLabel s) noexcept { return static_cast<int>(s); }

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };
std::string_view split_name(Split split) noexcept;
Split split_from_name(std::string_view name);

/// Class-agnostic text fused with images when no prompt is supplied.
inline constexpr std::string_view kNeutralPrompt = "an image of fungal growth";

struct GenConfig {
  int n_per_stage = 200;
  int image_size = 96;
  double t_min = 0.0;
  double t_max = 720.0;
  std::array<double, 2> stage_boundaries = {240.0, 480.0};
  std::uint64_t seed = 7;
  std::array<double, 3> split_ratios = {0.7, 0.15, 0.15};

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Time band [lo, hi) covered by a stage; mycelium's band is closed at t_max.
  std::pair<double, double> stage_band(StageLabel stage) const;
};

/// Rendering parameters at one point of the growth timeline. Every
/// continuous field is a continuous, non-decreasing function of time.
struct StageParams {
  StageLabel stage = StageLabel::kSpore;
  double density = 0.0;      // (t - t_min) / (t_max - t_min)
  double spore_count = 0.0;  // visible spores (floor is drawn)
  double spore_swell = 1.0;  // spore size multiplier
  double hyphal_growth = 0;  // filament length budget in reference pixels
  double mesh_links = 0.0;   // anastomosis filaments (floor is drawn)
};

StageParams growth_params_from_time(double t_hours, const GenConfig& cfg);

/// Renders one sample. Identical arguments give bit-identical pixels.
Image render_stage_image(const StageParams& params, std::uint64_t seed,
                         int image_size);

/// True for pixels that belong to drawn structure rather than background.
bool is_foreground(const std::uint8_t* rgb) noexcept;
std::size_t count_foreground(const Image& image) noexcept;

/// Fills one of the stage's templates with a coarse early/mid/late phrase.
std::string describe_sample(StageLabel stage, double t_hours,
                            std::uint64_t template_seed, const GenConfig& cfg);

/// Every string describe_sample can produce plus the neutral prompt; the
/// closed-world text corpus the tokenizer vocabulary is built from.
std::vector<std::string> description_corpus();

struct Sample {
  std::string image_path;  // relative to the dataset root
  StageLabel label = StageLabel::kSpore;
  double timestamp_hours = 0.0;
  std::string description;
  Split split = Split::kTrain;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Manifest = std::vector<Sample>;

inline constexpr std::string_view kManifestFile = "manifest.tsv";

/// Tab-separated manifest: '#' header, then
/// image_path, label_index, timestamp_hours, description, split.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

std::vector<Sample> select_split(const Manifest& manifest, Split split);

/// Generates 3 * n_per_stage samples under out_dir: images/, manifest.tsv
/// and splits/{train,val,test}.txt.
Manifest generate_dataset(const GenConfig& cfg,
                          const std::filesystem::path& out_dir);

/// Formats a double with the shortest representation that round-trips.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace cliptime
