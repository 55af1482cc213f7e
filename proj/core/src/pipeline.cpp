#include "cliptime/pipeline.hpp"

#include <array>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace cliptime {
namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace

Manifest cmd_generate(const PipelineConfig& cfg, bool force, std::ostream& log) {
  cfg.validate();
  const fs::path& root = cfg.paths.data_dir;
  const fs::path manifest_path = root / kManifestFile;
  if (fs::exists(manifest_path)) {
    if (!force) {
      throw UsageError("dataset already exists at " + root.string() +
                       "; pass --force to regenerate it");
    }
    // Only remove what the generator owns.
    std::error_code ec;
    fs::remove_all(root / "images", ec);
    fs::remove_all(root / "splits", ec);
    fs::remove(manifest_path, ec);
    if (ec) throw IoError("cannot clear " + root.string() + ": " + ec.message());
  }
  Manifest manifest = generate_dataset(cfg.gen, root);

  std::array<std::array<int, 3>, kNumStages> counts{};
  for (const Sample& s : manifest) ++counts[stage_index(s.label)][static_cast<int>(s.split)];
  log << "generated " << manifest.size() << " samples in " << root.string() << '\n';
  for (StageLabel stage : kAllStages) {
    const auto& c = counts[stage_index(stage)];
    log << "  " << stage_name(stage) << ": " << (c[0] + c[1] + c[2]) << " (train " << c[0]
        << ", val " << c[1] << ", test " << c[2] << ")\n";
  }
  return manifest;
}

TrainSummary cmd_train(const PipelineConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path manifest_path = cfg.paths.data_dir / kManifestFile;
  if (!fs::exists(manifest_path)) {
    throw DataError("no dataset at " + cfg.paths.data_dir.string() +
                    "; run `cliptime generate --config <file>` first");
  }
  const Manifest manifest = read_manifest(manifest_path);
  std::error_code ec;
  fs::create_directories(cfg.paths.run_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.paths.run_dir.string() + ": " + ec.message());

  CLIPTimeModel model(cfg.encoder, cfg.model, cfg.gen.image_size, Vocabulary::standard());
  model.init(cfg.train.seed);
  model.vocabulary().save(cfg.paths.run_dir / "vocab.txt");
  write_text_atomic(cfg.paths.run_dir / "config.yaml", dump_config(cfg));

  const FitResult fit_result =
      fit(manifest, cfg.paths.data_dir, model, cfg.train, [&](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof(line),
                      "epoch %3d  train %.4f (cls %.4f, time %.4f)  val %.4f (cls %.4f, time "
                      "%.4f)\n",
                      r.epoch, r.train.l_total, r.train.l_class, r.train.l_time,
                      r.val.l_total, r.val.l_class, r.val.l_time);
        log << line << std::flush;
      });

  const fs::path& run = cfg.paths.run_dir;
  save_checkpoint(run / kFinalCheckpoint, model, fit_result.scale,
                  {cfg.train.epochs, "final"});
  {
    CLIPTimeModel best = model;
    const ParameterList params = best.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = fit_result.best_parameters[i];
    }
    save_checkpoint(run / kBestCheckpoint, best, fit_result.scale,
                    {fit_result.best_epoch, "best"});
  }
  fs::path history_tmp = run / kHistoryFile;
  history_tmp += ".tmp";
  write_history(history_tmp, fit_result.history);
  fs::rename(history_tmp, run / kHistoryFile, ec);
  if (ec) throw IoError("cannot write history: " + ec.message());

  log << "best epoch " << fit_result.best_epoch << "; checkpoints written to "
      << run.string() << '\n';
  return TrainSummary{fit_result.history, fit_result.scale, fit_result.best_epoch};
}

EvalReport cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& options,
                        std::ostream& log) {
  const fs::path ckpt_path =
      options.checkpoint.value_or(cfg.paths.run_dir / kBestCheckpoint);
  if (!fs::exists(ckpt_path)) {
    throw DataError("checkpoint not found: " + ckpt_path.string());
  }
  const Checkpoint checkpoint = load_checkpoint(ckpt_path);
  const fs::path manifest_path = cfg.paths.data_dir / kManifestFile;
  if (!fs::exists(manifest_path)) {
    throw DataError("no dataset at " + cfg.paths.data_dir.string() +
                    "; run `cliptime generate --config <file>` first");
  }
  const Manifest manifest = read_manifest(manifest_path);
  const std::string prompt = options.prompt.value_or(std::string(kNeutralPrompt));

  EvalReport report =
      evaluate(checkpoint, manifest, options.split, cfg.paths.data_dir, prompt);

  RenderOptions render;
  render.data_root = cfg.paths.data_dir;
  const fs::path history_path = cfg.paths.run_dir / kHistoryFile;
  if (fs::exists(history_path)) render.history = read_history(history_path);
  const fs::path out_dir = options.out_dir.value_or(
      cfg.paths.run_dir / ("eval_" + std::string(split_name(options.split))));
  render_report(report, out_dir, render);

  char line[96];
  std::snprintf(line, sizeof(line), "accuracy %.6f (%ld/%ld)\n", report.accuracy,
                confusion_trace(report.confusion), report.n_samples);
  log << "split " << report.split << ": " << line;
  for (int s = 0; s < kNumStages; ++s) {
    const StageError& e = report.per_stage_mae[s];
    log << "  MAE " << stage_name(stage_from_index(s)) << ": ";
    if (e.defined()) {
      std::snprintf(line, sizeof(line), "%.2f h (std %.2f, n=%ld)\n", e.mean_hours,
                    e.std_hours, e.count);
      log << line;
    } else {
      log << "undefined (no samples)\n";
    }
  }
  if (!report.excluded.empty()) {
    log << "  excluded " << report.excluded.size() << " samples with unreadable images\n";
  }
  log << "report written to " << out_dir.string() << '\n';
  return report;
}

Prediction cmd_predict(const fs::path& checkpoint_path, const fs::path& image_path,
                       const std::optional<std::string>& prompt, std::ostream& out) {
  if (!fs::exists(checkpoint_path)) {
    throw DataError("checkpoint not found: " + checkpoint_path.string());
  }
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const Image image = read_png(image_path);
  const std::string text = prompt.value_or(std::string(kNeutralPrompt));
  const Prediction p = predict(checkpoint.model, checkpoint.scale, image, text);

  nlohmann::json record;
  record["image"] = image_path.string();
  record["prompt"] = text;
  record["stage"] = stage_name(p.stage);
  nlohmann::json probs = nlohmann::json::object();
  for (StageLabel s : kAllStages) probs[std::string(stage_name(s))] = p.probabilities[stage_index(s)];
  record["probabilities"] = probs;
  record["t_hat"] = p.t_hat;
  record["hours"] = p.hours;
  out << record.dump() << '\n';
  return p;
}

}  // namespace cliptime
