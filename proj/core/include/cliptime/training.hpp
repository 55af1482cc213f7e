#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cliptime/model.hpp"
#include "cliptime/synthgen.hpp"

namespace cliptime {

/// Stored (t_min, t_max) pair for min-max time normalization.
struct TimeScale {
  double t_min = 0.0;
  double t_max = 1.0;

  void validate() const;
  /// Range of the timestamps in `samples`. Throws DataError when empty or
  /// when every timestamp is equal.
  static TimeScale from_samples(std::span<const Sample> samples);

  friend bool operator==(const TimeScale&, const TimeScale&) = default;
};

/// (t - t_min) / (t_max - t_min), clamped to [0, 1] with a logged warning.
double normalize_time(double t_hours, const TimeScale& scale);
/// t_hat * (t_max - t_min) + t_min. Throws InputError unless t_hat is in [0, 1].
double denormalize_time(double t_hat, const TimeScale& scale);

/// Training batch boundaries for n samples: batches of batch_size, with a
/// short tail merged into the last batch. Returns offsets, first 0, last n.
std::vector<std::size_t> batch_bounds(std::size_t n, int batch_size);

struct LossBreakdown {
  double l_class = 0.0;
  double l_time = 0.0;
  double l_total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Mean cross-entropy of softmax(logits) against integer labels. Writes
/// dL/dlogits when `d_logits` is non-null.
double classification_loss(const Matrix& logits, std::span<const int> labels,
                           Matrix* d_logits = nullptr);

/// Mean squared error between predicted and true normalized times.
double time_loss(const Vector& t_hat, const Vector& t, Vector* d_t_hat = nullptr);

/// alpha * l_class + beta * l_time. Throws ConfigError on negative weights.
LossBreakdown total_loss(double l_class, double l_time, double alpha, double beta);

enum class OptimizerKind { kAdam, kSgd };
std::string_view optimizer_name(OptimizerKind kind) noexcept;
OptimizerKind optimizer_from_name(std::string_view name);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double alpha = 1.0;
  double beta = 1.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  /// Fraction of training samples whose text input is replaced by the
  /// neutral prompt, so the image branch carries the signal seen at
  /// inference time.
  double neutral_prompt_rate = 0.75;

  void validate() const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const ParameterList& params) = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const ParameterList& params) override;

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const ParameterList& params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

/// Samples loaded into memory together with their targets.
struct LoadedSplit {
  std::vector<Matrix> inputs;       // image_to_input per sample
  std::vector<TokenIds> tokens;     // tokenized descriptions
  std::vector<int> labels;
  std::vector<double> hours;
  std::vector<std::string> paths;
};

LoadedSplit load_split(const Manifest& manifest, Split split,
                       const std::filesystem::path& data_root, const CLIPTimeModel& model);

/// Forward + loss on one mini-batch; accumulates gradients when `train`.
struct BatchResult {
  LossBreakdown loss;
  HeadOutputs outputs;
};

BatchResult run_batch(CLIPTimeModel& model, std::span<const Matrix> inputs,
                      std::span<const TokenIds> tokens, std::span<const int> labels,
                      const Vector& t_norm, double alpha, double beta, bool train,
                      Rng* dropout_rng = nullptr);

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using History = std::vector<EpochRecord>;

/// Two lines per epoch: epoch, split, l_class, l_time, l_total (tab-separated).
void write_history(const std::filesystem::path& path, const History& history);
History read_history(const std::filesystem::path& path);

struct FitResult {
  History history;
  TimeScale scale;
  int best_epoch = 0;
  std::vector<Matrix> best_parameters;  // in model.parameters() order
};

/// Optional per-epoch observer (progress reporting).
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place. The time scale is computed from the train
/// split only; the validation pass always uses the neutral prompt.
FitResult fit(const Manifest& manifest, const std::filesystem::path& data_root,
              CLIPTimeModel& model, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// Mean loss over a loaded split using the given prompt for every sample.
LossBreakdown evaluate_loss(const CLIPTimeModel& model, const LoadedSplit& split,
                            const TimeScale& scale, std::string_view prompt,
                            double alpha, double beta, int batch_size);

}  // namespace cliptime
