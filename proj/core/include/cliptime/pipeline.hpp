#pragma once

// The generate / train / evaluate / predict commands as library calls.
// The command-line tool is a thin argument-parsing layer over these.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "cliptime/config.hpp"
#include "cliptime/evaluation.hpp"

namespace cliptime {

/// Raised for command misuse such as regenerating over existing data.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

inline constexpr std::string_view kFinalCheckpoint = "checkpoint_final.ckpt";
inline constexpr std::string_view kBestCheckpoint = "checkpoint_best.ckpt";
inline constexpr std::string_view kHistoryFile = "history.tsv";

/// Writes the dataset under cfg.paths.data_dir and prints per-stage counts.
/// Refuses to overwrite an existing dataset unless `force`.
Manifest cmd_generate(const PipelineConfig& cfg, bool force, std::ostream& log);

struct TrainSummary {
  History history;
  TimeScale scale;
  int best_epoch = 0;
};

/// Trains from scratch and writes final/best checkpoints, history.tsv,
/// vocab.txt and the resolved config under cfg.paths.run_dir.
TrainSummary cmd_train(const PipelineConfig& cfg, std::ostream& log);

struct EvaluateOptions {
  std::optional<std::filesystem::path> checkpoint;  // default: run_dir/best
  Split split = Split::kTest;
  std::optional<std::string> prompt;                // default: neutral prompt
  std::optional<std::filesystem::path> out_dir;     // default: run_dir/eval_<split>
};

EvalReport cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& options,
                        std::ostream& log);

/// Prints one JSON record: stage, probabilities, t_hat, hours.
Prediction cmd_predict(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& image_path,
                       const std::optional<std::string>& prompt, std::ostream& out);

}  // namespace cliptime
