#include <benchmark/benchmark.h>

#include "cliptime/model.hpp"
#include "cliptime/training.hpp"

namespace {

using namespace cliptime;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ModelConfig model_config(int d) {
  ModelConfig mc;
  mc.d = d;
  mc.ffn_hidden = 4 * d;
  mc.n_attention_heads = d >= 512 ? 8 : 4;
  return mc;
}

void BM_RenderStageImage(benchmark::State& state) {
  const GenConfig gen;
  const StageParams p = growth_params_from_time(600.0, gen);
  const int size = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_stage_image(p, ++seed, size));
}
BENCHMARK(BM_RenderStageImage)->Arg(32)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_ImageEncoderForward(benchmark::State& state) {
  EncoderConfig enc;
  enc.d = 64;
  enc.vision_arch = state.range(0) == 0 ? VisionArch::kCompactConv : VisionArch::kPatchMlp;
  ImageEncoder encoder(enc, 96);
  Rng rng(1);
  encoder.init(rng);
  const GenConfig gen;
  std::vector<Matrix> images;
  for (int i = 0; i < 32; ++i) {
    images.push_back(image_to_input(
        render_stage_image(growth_params_from_time(20.0 * i, gen), i, 96)));
  }
  for (auto _ : state) benchmark::DoNotOptimize(encoder.forward(images));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ImageEncoderForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TimeTransformerForward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  TimeTransformer tt(model_config(d));
  Rng rng(2);
  tt.init(rng);
  const Matrix fused = random_matrix(32, d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(tt.forward(fused));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TimeTransformerForward)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  EncoderConfig enc;
  enc.d = 64;
  CLIPTimeModel model(enc, model_config(64), 96, Vocabulary::standard());
  model.init(3);
  const GenConfig gen;
  Rng rng(4);
  std::vector<Matrix> inputs;
  std::vector<TokenIds> tokens;
  std::vector<int> labels;
  Vector t(32);
  for (int i = 0; i < 32; ++i) {
    const double h = rng.uniform(gen.t_min, gen.t_max);
    const StageParams p = growth_params_from_time(h, gen);
    inputs.push_back(image_to_input(render_stage_image(p, rng.next_u64(), 96)));
    tokens.push_back(model.tokenize(kNeutralPrompt));
    labels.push_back(stage_index(p.stage));
    t(i) = h / gen.t_max;
  }
  Adam adam(1e-4);
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(run_batch(model, inputs, tokens, labels, t, 1, 1, true));
    adam.step(model.parameters());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
