#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cliptime/checkpoint.hpp"
#include "cliptime/synthgen.hpp"
#include "cliptime/training.hpp"

namespace cliptime {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = std::vector<std::vector<long>>;

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int n_classes);
long confusion_total(const ConfusionMatrix& m);
long confusion_trace(const ConfusionMatrix& m);
/// trace / total. Throws InputError for an empty matrix.
double accuracy(const ConfusionMatrix& m);

/// Absolute time error of one stage. `count == 0` marks an undefined entry
/// whose mean and std are NaN.
struct StageError {
  double mean_hours = 0.0;
  double std_hours = 0.0;  // population standard deviation
  long count = 0;

  bool defined() const { return count > 0; }
};

/// Mean and population std of |pred - true| grouped by true stage.
std::vector<StageError> per_stage_mae(std::span<const double> predicted_hours,
                                      std::span<const double> true_hours,
                                      std::span<const int> true_stage, int n_classes);

struct Prediction {
  StageLabel stage = StageLabel::kSpore;
  std::array<double, kNumStages> probabilities{};
  double t_hat = 0.5;
  double hours = 0.0;
};

/// Runs both heads on one image fused with `prompt`.
Prediction predict(const CLIPTimeModel& model, const TimeScale& scale, const Image& image,
                   std::string_view prompt = kNeutralPrompt);

std::vector<Prediction> predict_batch(const CLIPTimeModel& model, const TimeScale& scale,
                                      std::span<const Image> images,
                                      std::string_view prompt = kNeutralPrompt);

struct ScatterPoint {
  std::string image_path;
  double true_hours = 0.0;
  double predicted_hours = 0.0;
  StageLabel true_stage = StageLabel::kSpore;
  StageLabel predicted_stage = StageLabel::kSpore;
};

struct EvalReport {
  std::string split;
  std::string prompt;
  TimeScale scale;
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::vector<StageError> per_stage_mae;
  std::vector<ScatterPoint> scatter;
  long n_samples = 0;
  std::vector<std::string> excluded;  // image paths that failed to load
};

/// Throws DataError if any internal identity of the report is violated.
void validate_report(const EvalReport& report);

/// Produces predictions for a batch of samples whose images loaded.
using BatchPredictor =
    std::function<std::vector<Prediction>(std::span<const Sample>, std::span<const Image>)>;

/// Runs `predictor` over a split. Samples whose image cannot be read are
/// recorded in `excluded` and left out of every metric.
EvalReport evaluate(const Manifest& manifest, Split split,
                    const std::filesystem::path& data_root, const BatchPredictor& predictor,
                    const TimeScale& scale, std::string prompt = std::string(kNeutralPrompt),
                    int batch_size = 32);

EvalReport evaluate(const Checkpoint& checkpoint, const Manifest& manifest, Split split,
                    const std::filesystem::path& data_root,
                    std::string_view prompt = kNeutralPrompt);

struct RenderOptions {
  std::filesystem::path data_root;  // for the qualitative grid images
  std::optional<History> history;   // loss curves are skipped when absent
  std::uint64_t grid_seed = 8;
  int grid_size = 8;
};

/// Writes report.json plus one data file and one SVG figure per analysis:
/// confusion, scatter, mae, history/loss_curves, qualitative grid.
void render_report(const EvalReport& report, const std::filesystem::path& out_dir,
                   const RenderOptions& options);

/// Seeded choice of up to `count` scatter rows for the qualitative grid,
/// returned in ascending index order.
std::vector<std::size_t> select_grid_samples(std::size_t n, int count, std::uint64_t seed);

}  // namespace cliptime
