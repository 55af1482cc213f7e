#include "cliptime/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "svg.hpp"

namespace fs = std::filesystem;

namespace cliptime {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fmt_hours(double h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", h);
  return buf;
}

std::string base64(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

void write_confusion(const EvalReport& r, const fs::path& dir) {
  auto tsv = open_out(dir / "confusion.tsv");
  tsv << "# rows: true stage, columns: predicted stage\n";
  tsv << "true\\predicted";
  for (StageLabel s : kAllStages) tsv << '\t' << stage_name(s);
  tsv << '\n';
  for (int i = 0; i < kNumStages; ++i) {
    tsv << stage_name(stage_from_index(i));
    for (int j = 0; j < kNumStages; ++j) tsv << '\t' << r.confusion[i][j];
    tsv << '\n';
  }

  Svg svg(420, 400);
  svg.text(210, 24, "Confusion matrix (" + r.split + ", accuracy " +
                        format_double(std::round(r.accuracy * 10000.0) / 100.0) + "%)",
           14, "middle");
  long max_count = 1;
  for (const auto& row : r.confusion) {
    for (long v : row) max_count = std::max(max_count, v);
  }
  const double x0 = 110, y0 = 60, cell = 90;
  for (int i = 0; i < kNumStages; ++i) {
    for (int j = 0; j < kNumStages; ++j) {
      const double level = static_cast<double>(r.confusion[i][j]) / max_count;
      const int shade = static_cast<int>(std::lround(245 - 190 * level));
      svg.rect(x0 + j * cell, y0 + i * cell, cell, cell,
               "rgb(" + std::to_string(shade) + "," + std::to_string(shade) + ",255)",
               "#333");
      svg.text(x0 + j * cell + cell / 2, y0 + i * cell + cell / 2 + 5,
               std::to_string(r.confusion[i][j]), 14, "middle",
               level > 0.6 ? "#fff" : "#000");
    }
    const std::string name(stage_name(stage_from_index(i)));
    svg.text(x0 - 8, y0 + i * cell + cell / 2 + 4, name, 12, "end");
    svg.text(x0 + i * cell + cell / 2, y0 + 3 * cell + 18, name, 12, "middle");
  }
  svg.text(x0 + 1.5 * cell, y0 + 3 * cell + 36, "predicted", 12, "middle");
  svg.text(20, y0 + 1.5 * cell, "true", 12, "middle");
  svg.save(dir / "confusion.svg");
}

void write_scatter(const EvalReport& r, const fs::path& dir) {
  auto tsv = open_out(dir / "scatter.tsv");
  tsv << "# image_path\ttrue_hours\tpredicted_hours\ttrue_stage\tpredicted_stage\n";
  for (const auto& p : r.scatter) {
    tsv << p.image_path << '\t' << format_double(p.true_hours) << '\t'
        << format_double(p.predicted_hours) << '\t' << stage_name(p.true_stage) << '\t'
        << stage_name(p.predicted_stage) << '\n';
  }

  const double panel = 260, margin = 50, gap = 30;
  Svg svg(margin + kNumStages * (panel + gap) + 10, panel + 2 * margin + 20);
  const double lo = r.scale.t_min;
  const double hi = r.scale.t_max;
  for (int s = 0; s < kNumStages; ++s) {
    const double px = margin + s * (panel + gap);
    const double py = margin;
    auto sx = [&](double h) { return px + (h - lo) / (hi - lo) * panel; };
    auto sy = [&](double h) { return py + panel - (h - lo) / (hi - lo) * panel; };
    svg.rect(px, py, panel, panel, "none", "#333");
    svg.text(px + panel / 2, py - 12, std::string(stage_name(stage_from_index(s))), 13,
             "middle");
    // Perfect-prediction diagonal over exactly [t_min, t_max] on both axes.
    svg.raw("<line class=\"identity\" data-h0=\"" + format_double(lo) + "\" data-h1=\"" +
            format_double(hi) + "\" x1=\"" + Svg::num(sx(lo)) + "\" y1=\"" +
            Svg::num(sy(lo)) + "\" x2=\"" + Svg::num(sx(hi)) + "\" y2=\"" +
            Svg::num(sy(hi)) + "\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>");
    for (const auto& p : r.scatter) {
      if (stage_index(p.true_stage) != s) continue;
      const bool correct = p.true_stage == p.predicted_stage;
      svg.circle(sx(std::clamp(p.true_hours, lo, hi)), sy(p.predicted_hours), 2.2,
                 correct ? "#1f77b4" : "#d62728");
    }
    svg.text(px, py + panel + 16, fmt_hours(lo), 10, "start");
    svg.text(px + panel, py + panel + 16, fmt_hours(hi), 10, "end");
    svg.text(px + panel / 2, py + panel + 32, "true hours", 11, "middle");
    if (s == 0) svg.text(px - 8, py + 10, fmt_hours(hi), 10, "end");
  }
  svg.vtext(18, margin + panel / 2, "predicted hours", 11);
  svg.save(dir / "scatter.svg");
}

void write_mae(const EvalReport& r, const fs::path& dir) {
  auto tsv = open_out(dir / "mae.tsv");
  tsv << "# stage\tmean_abs_error_hours\tstd_hours\tcount"
         "  (population std; grouped by true stage; all samples)\n";
  for (int s = 0; s < kNumStages; ++s) {
    const StageError& e = r.per_stage_mae[s];
    tsv << stage_name(stage_from_index(s)) << '\t'
        << (e.defined() ? format_double(e.mean_hours) : "nan") << '\t'
        << (e.defined() ? format_double(e.std_hours) : "nan") << '\t' << e.count << '\n';
  }

  Svg svg(420, 340);
  svg.text(210, 24, "Time MAE per stage (hours, +/- 1 std)", 14, "middle");
  double top = 1.0;
  for (const auto& e : r.per_stage_mae) {
    if (e.defined()) top = std::max(top, e.mean_hours + e.std_hours);
  }
  const double x0 = 60, base = 290, height = 230, width = 90;
  for (int s = 0; s < kNumStages; ++s) {
    const StageError& e = r.per_stage_mae[s];
    const double x = x0 + s * (width + 30);
    svg.text(x + width / 2, base + 18, std::string(stage_name(stage_from_index(s))), 12,
             "middle");
    if (!e.defined()) {
      svg.text(x + width / 2, base - 10, "n/a", 12, "middle");
      continue;
    }
    const double h = e.mean_hours / top * height;
    svg.rect(x, base - h, width, h, "#7fa7d6", "#333");
    const double y_hi = base - (e.mean_hours + e.std_hours) / top * height;
    const double y_lo = base - std::max(0.0, e.mean_hours - e.std_hours) / top * height;
    svg.line(x + width / 2, y_lo, x + width / 2, y_hi, "#000");
    svg.line(x + width / 2 - 8, y_hi, x + width / 2 + 8, y_hi, "#000");
    svg.line(x + width / 2 - 8, y_lo, x + width / 2 + 8, y_lo, "#000");
    svg.text(x + width / 2, y_hi - 6, fmt_hours(e.mean_hours), 11, "middle");
  }
  svg.line(x0 - 10, base, x0 + 3 * (width + 30), base, "#333");
  svg.save(dir / "mae.svg");
}

void write_loss_curves(const History& history, const fs::path& dir) {
  write_history(dir / "history.tsv", history);
  Svg svg(520, 340);
  svg.text(260, 24, "Training and validation loss", 14, "middle");
  const double x0 = 60, y0 = 50, w = 420, h = 230;
  double top = 1e-12;
  for (const auto& e : history) top = std::max({top, e.train.l_total, e.val.l_total});
  const double n = std::max<double>(1.0, static_cast<double>(history.size()) - 1.0);
  auto curve = [&](auto pick, const std::string& color, const std::string& name, double ly) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < history.size(); ++i) {
      pts.emplace_back(x0 + w * i / n, y0 + h - pick(history[i]) / top * h);
    }
    svg.polyline(pts, color);
    svg.line(x0 + w - 90, ly, x0 + w - 70, ly, color);
    svg.text(x0 + w - 64, ly + 4, name, 11, "start");
  };
  svg.rect(x0, y0, w, h, "none", "#333");
  curve([](const EpochRecord& e) { return e.train.l_total; }, "#1f77b4", "train", y0 + 16);
  curve([](const EpochRecord& e) { return e.val.l_total; }, "#ff7f0e", "val", y0 + 32);
  svg.text(x0 + w / 2, y0 + h + 30, "epoch", 11, "middle");
  svg.text(x0 - 6, y0 + 10, format_double(std::round(top * 1000) / 1000), 10, "end");
  svg.text(x0 - 6, y0 + h, "0", 10, "end");
  svg.save(dir / "loss_curves.svg");
}

void write_grid(const EvalReport& r, const RenderOptions& options, const fs::path& dir) {
  const auto picks = select_grid_samples(r.scatter.size(), options.grid_size, options.grid_seed);
  auto tsv = open_out(dir / "qualitative.tsv");
  tsv << "# index\timage_path\ttrue_stage\tpredicted_stage\ttrue_hours\tpredicted_hours\n";
  const int cols = 4;
  const double tile = 150;
  const int rows = std::max<int>(1, (static_cast<int>(picks.size()) + cols - 1) / cols);
  Svg svg(cols * (tile + 20) + 20, rows * (tile + 56) + 20);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const ScatterPoint& p = r.scatter[picks[k]];
    tsv << picks[k] << '\t' << p.image_path << '\t' << stage_name(p.true_stage) << '\t'
        << stage_name(p.predicted_stage) << '\t' << format_double(p.true_hours) << '\t'
        << format_double(p.predicted_hours) << '\n';
    const double x = 20 + (k % cols) * (tile + 20);
    const double y = 20 + (k / cols) * (tile + 56);
    try {
      const Image img = read_png(options.data_root / p.image_path);
      svg.image(x, y, tile, tile, "data:image/png;base64," + base64(encode_png(img)));
    } catch (const Error&) {
      svg.rect(x, y, tile, tile, "#eee", "#999");
    }
    svg.text(x, y + tile + 16,
             "#" + std::to_string(picks[k]) + " true: " + std::string(stage_name(p.true_stage)) +
                 " " + fmt_hours(p.true_hours) + " h",
             11, "start");
    svg.text(x, y + tile + 32,
             "pred: " + std::string(stage_name(p.predicted_stage)) + " " +
                 fmt_hours(p.predicted_hours) + " h",
             11, "start", p.true_stage == p.predicted_stage ? "#000" : "#d62728");
  }
  svg.save(dir / "qualitative_grid.svg");
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["prompt"] = r.prompt;
  j["n_samples"] = r.n_samples;
  j["n_excluded"] = r.excluded.size();
  j["excluded"] = r.excluded;
  j["accuracy"] = r.accuracy;
  j["class_names"] = {"spore", "hyphae", "mycelium"};
  j["confusion"] = r.confusion;
  j["time_scale"] = {{"t_min", r.scale.t_min}, {"t_max", r.scale.t_max}};
  nlohmann::json mae = nlohmann::json::object();
  for (int s = 0; s < kNumStages; ++s) {
    const StageError& e = r.per_stage_mae[s];
    mae[std::string(stage_name(stage_from_index(s)))] = {
        {"mean_hours", e.defined() ? nlohmann::json(e.mean_hours) : nlohmann::json()},
        {"std_hours", e.defined() ? nlohmann::json(e.std_hours) : nlohmann::json()},
        {"count", e.count},
        {"defined", e.defined()}};
  }
  j["per_stage_mae"] = mae;
  j["notes"] = {
      {"std", "population standard deviation of absolute error"},
      {"mae_grouping", "grouped by true stage"},
      {"mae_population", "all evaluated samples, including misclassified ones"},
      {"prompt_policy", "every sample is fused with the same prompt text"}};
  return j;
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int n_classes) {
  if (predicted.size() != truth.size()) {
    throw InputError("prediction and label vectors differ in length");
  }
  if (n_classes <= 0) throw InputError("number of classes must be positive");
  ConfusionMatrix m(n_classes, std::vector<long>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 ||
        predicted[i] >= n_classes) {
      throw InputError("class index out of range at position " + std::to_string(i));
    }
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

long confusion_total(const ConfusionMatrix& m) {
  long total = 0;
  for (const auto& row : m) {
    for (long v : row) total += v;
  }
  return total;
}

long confusion_trace(const ConfusionMatrix& m) {
  long trace = 0;
  for (std::size_t i = 0; i < m.size(); ++i) trace += m[i][i];
  return trace;
}

double accuracy(const ConfusionMatrix& m) {
  const long total = confusion_total(m);
  if (total == 0) throw InputError("accuracy is undefined for zero samples");
  return static_cast<double>(confusion_trace(m)) / static_cast<double>(total);
}

std::vector<StageError> per_stage_mae(std::span<const double> predicted_hours,
                                      std::span<const double> true_hours,
                                      std::span<const int> true_stage, int n_classes) {
  if (predicted_hours.size() != true_hours.size() || true_hours.size() != true_stage.size()) {
    throw InputError("per-stage MAE inputs differ in length");
  }
  std::vector<double> sum(n_classes, 0.0);
  std::vector<long> count(n_classes, 0);
  for (std::size_t i = 0; i < true_hours.size(); ++i) {
    if (!std::isfinite(predicted_hours[i]) || !std::isfinite(true_hours[i])) {
      throw InputError("non-finite hours at position " + std::to_string(i));
    }
    if (true_stage[i] < 0 || true_stage[i] >= n_classes) {
      throw InputError("stage index out of range at position " + std::to_string(i));
    }
    sum[true_stage[i]] += std::abs(predicted_hours[i] - true_hours[i]);
    ++count[true_stage[i]];
  }
  std::vector<StageError> out(n_classes);
  for (int s = 0; s < n_classes; ++s) {
    out[s].count = count[s];
    if (count[s] == 0) {
      out[s].mean_hours = kNaN;
      out[s].std_hours = kNaN;
      continue;
    }
    out[s].mean_hours = sum[s] / static_cast<double>(count[s]);
  }
  // Second pass for a numerically stable variance.
  std::vector<double> sq(n_classes, 0.0);
  for (std::size_t i = 0; i < true_hours.size(); ++i) {
    const double dev =
        std::abs(predicted_hours[i] - true_hours[i]) - out[true_stage[i]].mean_hours;
    sq[true_stage[i]] += dev * dev;
  }
  for (int s = 0; s < n_classes; ++s) {
    if (count[s] > 0) out[s].std_hours = std::sqrt(sq[s] / static_cast<double>(count[s]));
  }
  return out;
}

std::vector<Prediction> predict_batch(const CLIPTimeModel& model, const TimeScale& scale,
                                      std::span<const Image> images, std::string_view prompt) {
  std::vector<Matrix> inputs;
  inputs.reserve(images.size());
  for (const Image& img : images) {
    if (img.width != model.image_size() || img.height != model.image_size()) {
      throw ShapeError("image is " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + ", model expects " +
                       std::to_string(model.image_size()) + "x" +
                       std::to_string(model.image_size()));
    }
    inputs.push_back(image_to_input(img));
  }
  const std::vector<TokenIds> tokens(images.size(), model.tokenize(prompt));
  const HeadOutputs out = model.forward(inputs, tokens);
  const Matrix probs = softmax_rows(out.logits);
  std::vector<Prediction> preds(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Prediction& p = preds[i];
    Eigen::Index best = 0;
    probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    p.stage = stage_from_index(static_cast<int>(best));
    for (int c = 0; c < kNumStages; ++c) p.probabilities[c] = probs(i, c);
    p.t_hat = out.t_hat(i);
    p.hours = denormalize_time(p.t_hat, scale);
  }
  return preds;
}

Prediction predict(const CLIPTimeModel& model, const TimeScale& scale, const Image& image,
                   std::string_view prompt) {
  return predict_batch(model, scale, std::span<const Image>(&image, 1), prompt).front();
}

void validate_report(const EvalReport& r) {
  if (confusion_total(r.confusion) != r.n_samples) {
    throw DataError("report invariant violated: confusion total != n_samples");
  }
  if (r.n_samples > 0 &&
      r.accuracy != static_cast<double>(confusion_trace(r.confusion)) / r.n_samples) {
    throw DataError("report invariant violated: accuracy != trace / n_samples");
  }
  long counted = 0;
  for (const auto& e : r.per_stage_mae) counted += e.count;
  if (counted != r.n_samples) {
    throw DataError("report invariant violated: per-stage counts do not sum to n_samples");
  }
  if (static_cast<long>(r.scatter.size()) != r.n_samples) {
    throw DataError("report invariant violated: scatter size != n_samples");
  }
  for (int i = 0; i < static_cast<int>(r.confusion.size()); ++i) {
    long row = 0;
    for (long v : r.confusion[i]) row += v;
    if (row != r.per_stage_mae[i].count) {
      throw DataError("report invariant violated: confusion row sum != stage count");
    }
  }
}

EvalReport evaluate(const Manifest& manifest, Split split, const fs::path& data_root,
                    const BatchPredictor& predictor, const TimeScale& scale, std::string prompt,
                    int batch_size) {
  const std::vector<Sample> samples = select_split(manifest, split);
  if (samples.empty()) {
    throw DataError("split '" + std::string(split_name(split)) + "' has no samples");
  }
  EvalReport report;
  report.split = std::string(split_name(split));
  report.prompt = std::move(prompt);
  report.scale = scale;

  std::vector<int> pred_idx, true_idx;
  std::vector<double> pred_h, true_h;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Sample> batch;
    std::vector<Image> images;
    for (std::size_t i = start; i < end; ++i) {
      try {
        images.push_back(read_png(data_root / samples[i].image_path));
        batch.push_back(samples[i]);
      } catch (const DataError&) {
        report.excluded.push_back(samples[i].image_path);
      }
    }
    if (batch.empty()) continue;
    const std::vector<Prediction> preds = predictor(batch, images);
    if (preds.size() != batch.size()) throw DataError("predictor returned the wrong count");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      pred_idx.push_back(stage_index(preds[i].stage));
      true_idx.push_back(stage_index(batch[i].label));
      pred_h.push_back(preds[i].hours);
      true_h.push_back(batch[i].timestamp_hours);
      report.scatter.push_back(ScatterPoint{batch[i].image_path, batch[i].timestamp_hours,
                                            preds[i].hours, batch[i].label, preds[i].stage});
    }
  }
  if (true_idx.empty()) throw DataError("no sample of the split could be evaluated");
  report.n_samples = static_cast<long>(true_idx.size());
  report.confusion = confusion_matrix(pred_idx, true_idx, kNumStages);
  report.accuracy = accuracy(report.confusion);
  report.per_stage_mae = per_stage_mae(pred_h, true_h, true_idx, kNumStages);
  validate_report(report);
  return report;
}

EvalReport evaluate(const Checkpoint& checkpoint, const Manifest& manifest, Split split,
                    const fs::path& data_root, std::string_view prompt) {
  const BatchPredictor predictor = [&](std::span<const Sample>, std::span<const Image> images) {
    return predict_batch(checkpoint.model, checkpoint.scale, images, prompt);
  };
  return evaluate(manifest, split, data_root, predictor, checkpoint.scale, std::string(prompt));
}

std::vector<std::size_t> select_grid_samples(std::size_t n, int count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(std::min<std::size_t>(n, static_cast<std::size_t>(std::max(count, 0))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

void render_report(const EvalReport& report, const fs::path& out_dir,
                   const RenderOptions& options) {
  validate_report(report);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    auto out = open_out(out_dir / "report.json");
    out << report_json(report).dump(2) << '\n';
  }
  write_confusion(report, out_dir);
  write_scatter(report, out_dir);
  write_mae(report, out_dir);
  if (options.history) write_loss_curves(*options.history, out_dir);
  write_grid(report, options, out_dir);
}

}  // namespace cliptime
