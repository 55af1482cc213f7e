#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "cliptime/checkpoint.hpp"
#include "cliptime/config.hpp"
#include "cliptime/evaluation.hpp"
#include "test_support.hpp"

namespace cliptime {
namespace {

using test_util::TempDir;

CLIPTimeModel make_model(std::uint64_t seed) {
  EncoderConfig enc;
  enc.d = 16;
  ModelConfig mc;
  mc.d = 16;
  mc.n_attention_heads = 4;
  mc.ffn_hidden = 24;
  mc.n_encoder_layers = 2;
  CLIPTimeModel model(enc, mc, 32, Vocabulary::standard());
  model.init(seed);
  return model;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  const CLIPTimeModel model = make_model(3);
  const TimeScale scale{0.1 + 1.0 / 3.0, 719.9 - 1.0 / 7.0};
  save_checkpoint(dir / "m.ckpt", model, scale, {12, "best"});
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");

  EXPECT_EQ(ck.scale.t_min, scale.t_min);
  EXPECT_EQ(ck.scale.t_max, scale.t_max);
  EXPECT_EQ(ck.meta.epoch, 12);
  EXPECT_EQ(ck.meta.kind, "best");
  EXPECT_EQ(ck.model.image_size(), 32);
  EXPECT_EQ(ck.model.model_config().n_attention_heads, 4);
  EXPECT_EQ(ck.model.vocabulary().tokens(), model.vocabulary().tokens());

  const auto a = model.parameters();
  const auto b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }

  GenConfig gen;
  const Image img = render_stage_image(growth_params_from_time(500, gen), 77, 32);
  const Prediction pa = predict(model, scale, img);
  const Prediction pb = predict(ck.model, ck.scale, img);
  EXPECT_EQ(pa.hours, pb.hours);
  EXPECT_EQ(pa.probabilities, pb.probabilities);
}

TEST(Checkpoint, StartsWithMagicAndLeavesNoTempFile) {
  TempDir dir;
  save_checkpoint(dir / "m.ckpt", make_model(1), TimeScale{0, 720});
  const std::string bytes = slurp(dir / "m.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "CLIPTCKP");
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  { std::ofstream(dir / "junk.ckpt") << "definitely not a checkpoint"; }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);

  save_checkpoint(dir / "m.ckpt", make_model(1), TimeScale{0, 720});
  const std::string bytes = slurp(dir / "m.ckpt");
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 100);
  }
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
  std::string bumped = bytes;
  bumped[8] = 9;
  {
    std::ofstream out(dir / "version.ckpt", std::ios::binary);
    out << bumped;
  }
  EXPECT_THROW(load_checkpoint(dir / "version.ckpt"), DataError);
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const PipelineConfig cfg = parse_config("", "/base");
  EXPECT_EQ(cfg.gen.n_per_stage, GenConfig{}.n_per_stage);
  EXPECT_EQ(cfg.train.learning_rate, 1e-4);
  EXPECT_EQ(cfg.paths.data_dir, std::filesystem::path("/base/data"));
}

TEST(Config, ReadsEverySection) {
  const PipelineConfig cfg = parse_config(R"(
gen:
  n_per_stage: 12
  image_size: 40
  stage_boundaries: [200, 500]
encoder:
  d: 32
  vision_arch: patch-mlp
  normalize_embeddings: false
model:
  d: 32
  n_attention_heads: 4
  ffn_hidden: 64
train:
  epochs: 3
  optimizer: sgd
  neutral_prompt_rate: 0.25
paths:
  data_dir: ../d
  run_dir: /abs/run
)",
                                          "/cfg/sub");
  EXPECT_EQ(cfg.gen.n_per_stage, 12);
  EXPECT_EQ(cfg.gen.image_size, 40);
  EXPECT_EQ(cfg.gen.stage_boundaries, (std::array<double, 2>{200, 500}));
  EXPECT_EQ(cfg.encoder.vision_arch, VisionArch::kPatchMlp);
  EXPECT_FALSE(cfg.encoder.normalize_embeddings);
  EXPECT_EQ(cfg.model.ffn_hidden, 64);
  EXPECT_EQ(cfg.train.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(cfg.train.neutral_prompt_rate, 0.25);
  EXPECT_EQ(cfg.paths.data_dir, std::filesystem::path("/cfg/d"));
  EXPECT_EQ(cfg.paths.run_dir, std::filesystem::path("/abs/run"));
}

void expect_config_error(const std::string& yaml, const std::string& fragment) {
  try {
    parse_config(yaml, "/base", "t.yaml");
    FAIL() << "accepted: " << yaml;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(Config, StrictErrorsNameTheLine) {
  expect_config_error("gen:\n  n_per_stage: 10\n  colour: red\n", "t.yaml:3:");
  expect_config_error("gen:\n  n_per_stage: 10\n  colour: red\n", "unknown key 'colour'");
  expect_config_error("train:\n  epochs: many\n", "t.yaml:2:");
  expect_config_error("bogus:\n  x: 1\n", "unknown key 'bogus'");
  expect_config_error("train:\n  optimizer: lbfgs\n", "t.yaml:2:");
  expect_config_error("gen: [1, 2\n", "t.yaml:");
  expect_config_error("encoder:\n  d: 32\n", "encoder.d and model.d");
  expect_config_error("train:\n  learning_rate: -1\n", "t.yaml");
}

TEST(Config, DumpParsesBackToTheSameConfig) {
  PipelineConfig cfg = parse_config("gen:\n  n_per_stage: 7\ntrain:\n  alpha: 0.5\n", "/x");
  cfg.override_seed(99);
  const PipelineConfig back = parse_config(dump_config(cfg), "/elsewhere");
  EXPECT_EQ(dump_config(back), dump_config(cfg));
  EXPECT_EQ(back.gen.seed, 99u);
  EXPECT_EQ(back.train.seed, 99u);
  EXPECT_EQ(back.train.alpha, 0.5);
}

TEST(Config, LoadResolvesAgainstTheFileDirectory) {
  TempDir dir;
  std::filesystem::create_directories(dir / "configs");
  { std::ofstream(dir / "configs/a.yaml") << "paths:\n  data_dir: ../work/data\n"; }
  const PipelineConfig cfg = load_config(dir / "configs/a.yaml");
  EXPECT_EQ(cfg.paths.data_dir, (dir.path() / "work/data").lexically_normal());
  EXPECT_THROW(load_config(dir / "nope.yaml"), ConfigError);
}

TEST(Config, ShippedConfigsAreValid) {
  const std::filesystem::path root = CLIPTIME_SOURCE_DIR;
  for (const char* name : {"desk.yaml", "full.yaml"}) {
    const PipelineConfig cfg = load_config(root / "configs" / name);
    EXPECT_EQ(cfg.encoder.d, cfg.model.d) << name;
    EXPECT_EQ(cfg.train.epochs, 30) << name;
    EXPECT_EQ(cfg.train.batch_size, 32) << name;
    EXPECT_EQ(cfg.gen.image_size, 96) << name;
  }
}

}  // namespace
}  // namespace cliptime
