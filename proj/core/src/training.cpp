#include "cliptime/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace cliptime {

void TimeScale::validate() const {
  if (!std::isfinite(t_min) || !std::isfinite(t_max) || !(t_max > t_min)) {
    throw RangeError("degenerate time scale: t_max must exceed t_min");
  }
}

TimeScale TimeScale::from_samples(std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("cannot derive a time scale from no samples");
  TimeScale s{samples[0].timestamp_hours, samples[0].timestamp_hours};
  for (const Sample& x : samples) {
    s.t_min = std::min(s.t_min, x.timestamp_hours);
    s.t_max = std::max(s.t_max, x.timestamp_hours);
  }
  if (!(s.t_max > s.t_min)) throw DataError("all timestamps are equal; time scale is degenerate");
  return s;
}

double normalize_time(double t, const TimeScale& scale) {
  scale.validate();
  const double u = (t - scale.t_min) / (scale.t_max - scale.t_min);
  if (u < 0.0 || u > 1.0) {
    spdlog::warn("timestamp {} h outside [{}, {}]; clamped", t, scale.t_min, scale.t_max);
    return std::clamp(u, 0.0, 1.0);
  }
  return u;
}

namespace {

// Normalizes a whole split, reporting out-of-range timestamps once.
std::vector<double> normalize_all(std::span<const double> hours, const TimeScale& scale) {
  scale.validate();
  std::vector<double> out(hours.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < hours.size(); ++i) {
    const double u = (hours[i] - scale.t_min) / (scale.t_max - scale.t_min);
    if (u < 0.0 || u > 1.0) ++clamped;
    out[i] = std::clamp(u, 0.0, 1.0);
  }
  if (clamped > 0) {
    spdlog::warn("{} of {} timestamps outside [{}, {}] h; clamped", clamped, hours.size(),
                 scale.t_min, scale.t_max);
  }
  return out;
}

LossBreakdown split_loss(const CLIPTimeModel& model, const LoadedSplit& split,
                         std::span<const double> targets, std::string_view prompt,
                         double alpha, double beta, int batch_size) {
  const std::size_t n = split.inputs.size();
  if (n == 0) throw DataError("cannot evaluate the loss of an empty split");
  const TokenIds prompt_tokens = model.tokenize(prompt);
  double l_class = 0.0;
  double l_time = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    const std::size_t b = end - start;
    const std::vector<TokenIds> tokens(b, prompt_tokens);
    Vector t(static_cast<Eigen::Index>(b));
    for (std::size_t i = 0; i < b; ++i) t(i) = targets[start + i];
    const HeadOutputs out =
        model.forward(std::span(split.inputs).subspan(start, b), tokens);
    l_class += classification_loss(out.logits, std::span(split.labels).subspan(start, b)) * b;
    l_time += time_loss(out.t_hat, t) * b;
  }
  return total_loss(l_class / n, l_time / n, alpha, beta);
}

}  // namespace

std::vector<std::size_t> batch_bounds(std::size_t n, int batch_size) {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  const auto bs = static_cast<std::size_t>(batch_size);
  std::vector<std::size_t> bounds{0};
  if (n == 0) return bounds;
  const std::size_t full = std::max<std::size_t>(1, n / bs);
  for (std::size_t k = 1; k < full; ++k) bounds.push_back(k * bs);
  bounds.push_back(n);
  return bounds;
}

double denormalize_time(double t_hat, const TimeScale& scale) {
  scale.validate();
  if (!(t_hat >= 0.0 && t_hat <= 1.0)) {
    throw InputError("normalized time must lie in [0, 1]");
  }
  return t_hat * (scale.t_max - scale.t_min) + scale.t_min;
}

double classification_loss(const Matrix& logits, std::span<const int> labels,
                           Matrix* d_logits) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw InputError("logits and labels disagree on batch size");
  }
  if (labels.empty()) throw InputError("classification loss of an empty batch");
  const Eigen::Index classes = logits.cols();
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  double loss = 0.0;
  if (d_logits) d_logits->resize(logits.rows(), classes);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= classes) {
      throw InputError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    loss += lse - logits(r, y);
    if (d_logits) {
      d_logits->row(r) = (logits.row(r).array() - lse).exp() * inv_b;
      (*d_logits)(r, y) -= inv_b;
    }
  }
  return loss * inv_b;
}

double time_loss(const Vector& t_hat, const Vector& t, Vector* d_t_hat) {
  if (t_hat.size() != t.size()) throw InputError("time loss inputs differ in length");
  if (t.size() == 0) throw InputError("time loss of an empty batch");
  const Vector diff = t_hat - t;
  const double n = static_cast<double>(t.size());
  if (d_t_hat) *d_t_hat = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

LossBreakdown total_loss(double l_class, double l_time, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights must be nonnegative");
  return LossBreakdown{l_class, l_time, alpha * l_class + beta * l_time};
}

std::string_view optimizer_name(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("train.alpha and train.beta must be nonnegative");
  if (!(alpha + beta > 0.0)) throw ConfigError("train.alpha + train.beta must be positive");
  if (!(neutral_prompt_rate >= 0.0 && neutral_prompt_rate <= 1.0)) {
    throw ConfigError("train.neutral_prompt_rate must lie in [0, 1]");
  }
}

void Sgd::step(const ParameterList& params) {
  for (Parameter* p : params) p->value -= lr_ * p->grad;
}

void Adam::step(const ParameterList& params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::kAdam) return std::make_unique<Adam>(cfg.learning_rate);
  return std::make_unique<Sgd>(cfg.learning_rate);
}

LoadedSplit load_split(const Manifest& manifest, Split split, const fs::path& data_root,
                       const CLIPTimeModel& model) {
  LoadedSplit out;
  for (const Sample& s : manifest) {
    if (s.split != split) continue;
    const Image image = read_png(data_root / s.image_path);
    if (image.width != model.image_size() || image.height != model.image_size()) {
      throw DataError(s.image_path + ": image size does not match the model");
    }
    out.inputs.push_back(image_to_input(image));
    out.tokens.push_back(model.tokenize(s.description));
    out.labels.push_back(stage_index(s.label));
    out.hours.push_back(s.timestamp_hours);
    out.paths.push_back(s.image_path);
  }
  return out;
}

BatchResult run_batch(CLIPTimeModel& model, std::span<const Matrix> inputs,
                      std::span<const TokenIds> tokens, std::span<const int> labels,
                      const Vector& t_norm, double alpha, double beta, bool train,
                      Rng* dropout_rng) {
  BatchResult result;
  ForwardCache cache;
  result.outputs = model.forward(inputs, tokens, train ? &cache : nullptr,
                                 train ? dropout_rng : nullptr);
  Matrix d_logits;
  Vector d_t_hat;
  const double l_class =
      classification_loss(result.outputs.logits, labels, train ? &d_logits : nullptr);
  const double l_time = time_loss(result.outputs.t_hat, t_norm, train ? &d_t_hat : nullptr);
  result.loss = total_loss(l_class, l_time, alpha, beta);
  if (train) {
    model.backward(cache, alpha * d_logits, beta * d_t_hat);
  }
  return result;
}

LossBreakdown evaluate_loss(const CLIPTimeModel& model, const LoadedSplit& split,
                            const TimeScale& scale, std::string_view prompt, double alpha,
                            double beta, int batch_size) {
  if (split.inputs.empty()) throw DataError("cannot evaluate the loss of an empty split");
  return split_loss(model, split, normalize_all(split.hours, scale), prompt, alpha, beta,
                    batch_size);
}

void write_history(const fs::path& path, const History& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path.string());
  for (const EpochRecord& r : history) {
    for (const auto& [name, loss] : {std::pair{"train", r.train}, std::pair{"val", r.val}}) {
      out << r.epoch << '\t' << name << '\t' << format_double(loss.l_class) << '\t'
          << format_double(loss.l_time) << '\t' << format_double(loss.l_total) << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

History read_history(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read history: " + path.string());
  History history;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string epoch, split, a, b, c;
    if (!std::getline(fields, epoch, '\t') || !std::getline(fields, split, '\t') ||
        !std::getline(fields, a, '\t') || !std::getline(fields, b, '\t') ||
        !std::getline(fields, c, '\t')) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
    const int e = std::stoi(epoch);
    if (history.empty() || history.back().epoch != e) history.push_back({e, {}, {}});
    LossBreakdown loss{parse_double(a), parse_double(b), parse_double(c)};
    if (split == "train") {
      history.back().train = loss;
    } else if (split == "val") {
      history.back().val = loss;
    } else {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad split");
    }
  }
  return history;
}

FitResult fit(const Manifest& manifest, const fs::path& data_root, CLIPTimeModel& model,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const std::vector<Sample> train_samples = select_split(manifest, Split::kTrain);
  if (train_samples.empty()) throw DataError("train split is empty");
  if (select_split(manifest, Split::kVal).empty()) throw DataError("val split is empty");

  FitResult result;
  result.scale = TimeScale::from_samples(train_samples);
  const LoadedSplit train = load_split(manifest, Split::kTrain, data_root, model);
  const LoadedSplit val = load_split(manifest, Split::kVal, data_root, model);

  const std::vector<double> train_norm = normalize_all(train.hours, result.scale);
  const std::vector<double> val_norm = normalize_all(val.hours, result.scale);
  const TokenIds neutral = model.tokenize(kNeutralPrompt);
  const auto optimizer = make_optimizer(cfg);
  const ParameterList params = model.parameters();
  Rng dropout_rng(derive_seed(cfg.seed, 0xd0));
  double best_val = std::numeric_limits<double>::infinity();

  const std::size_t n = train.inputs.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, epoch_rng);

    double sum_class = 0.0;
    double sum_time = 0.0;
    int batch_index = 0;
    const std::vector<std::size_t> bounds = batch_bounds(n, cfg.batch_size);
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k, ++batch_index) {
      const std::size_t start = bounds[k];
      const std::size_t b = bounds[k + 1] - start;
      std::vector<Matrix> inputs;
      std::vector<TokenIds> tokens;
      std::vector<int> labels;
      Vector t(static_cast<Eigen::Index>(b));
      inputs.reserve(b);
      tokens.reserve(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t k = order[start + i];
        inputs.push_back(train.inputs[k]);
        tokens.push_back(epoch_rng.uniform() < cfg.neutral_prompt_rate ? neutral
                                                                        : train.tokens[k]);
        labels.push_back(train.labels[k]);
        t(static_cast<Eigen::Index>(i)) = train_norm[k];
      }
      model.zero_grad();
      const BatchResult r =
          run_batch(model, inputs, tokens, labels, t, cfg.alpha, cfg.beta, true, &dropout_rng);
      if (!std::isfinite(r.loss.l_total)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_index) +
                             " (l_class=" + format_double(r.loss.l_class) +
                             ", l_time=" + format_double(r.loss.l_time) + ")");
      }
      optimizer->step(params);
      sum_class += r.loss.l_class * static_cast<double>(b);
      sum_time += r.loss.l_time * static_cast<double>(b);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train = total_loss(sum_class / n, sum_time / n, cfg.alpha, cfg.beta);
    record.val =
        split_loss(model, val, val_norm, kNeutralPrompt, cfg.alpha, cfg.beta, cfg.batch_size);
    if (!std::isfinite(record.val.l_total)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(record);
    if (record.val.l_total < best_val) {
      best_val = record.val.l_total;
      result.best_epoch = epoch;
      result.best_parameters.clear();
      for (const Parameter* p : params) result.best_parameters.push_back(p->value);
    }
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace cliptime
