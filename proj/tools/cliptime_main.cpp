// Command-line entry point: generate / train / evaluate / predict.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error,
// 3 runtime or numerical error.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cliptime/pipeline.hpp"

namespace {

cliptime::PipelineConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto cfg = cliptime::load_config(path);
  if (seed) cfg.override_seed(*seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cliptime: joint growth-stage classification and timestamp regression"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string checkpoint;
  std::string split = "test";
  std::optional<std::string> prompt;
  std::string out_dir;
  std::string image_path;

  auto* gen = app.add_subcommand("generate", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "Pipeline config file")->required();
  gen->add_flag("--force", force, "Regenerate over an existing dataset");
  gen->add_option("--seed", seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Train and write checkpoints");
  train->add_option("--config", config_path, "Pipeline config file")->required();
  train->add_option("--seed", seed, "Override the config seed");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on one split");
  eval->add_option("--config", config_path, "Pipeline config file")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: best in run_dir)");
  eval->add_option("--split", split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--prompt", prompt, "Text fused with every image");
  eval->add_option("--out", out_dir, "Report directory (default: run_dir/eval_<split>)");
  eval->add_option("--seed", seed, "Override the config seed");

  auto* pred = app.add_subcommand("predict", "Predict stage and hours for one image");
  pred->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pred->add_option("image", image_path, "PNG image")->required();
  pred->add_option("--prompt", prompt, "Text fused with the image");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      cliptime::cmd_generate(load(config_path, seed), force, std::cout);
    } else if (*train) {
      cliptime::cmd_train(load(config_path, seed), std::cout);
    } else if (*eval) {
      cliptime::EvaluateOptions options;
      if (!checkpoint.empty()) options.checkpoint = checkpoint;
      options.split = cliptime::split_from_name(split);
      options.prompt = prompt;
      if (!out_dir.empty()) options.out_dir = out_dir;
      cliptime::cmd_evaluate(load(config_path, seed), options, std::cout);
    } else if (*pred) {
      cliptime::cmd_predict(checkpoint, image_path, prompt, std::cout);
    }
  } catch (const cliptime::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cliptime::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
