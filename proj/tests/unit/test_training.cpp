#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cliptime/training.hpp"
#include "test_support.hpp"

namespace cliptime {
namespace {

using test_util::TempDir;

TEST(NormalizeTime, Endpoints) {
  const TimeScale s{100.0, 300.0};
  EXPECT_EQ(normalize_time(100.0, s), 0.0);
  EXPECT_EQ(normalize_time(300.0, s), 1.0);
  EXPECT_EQ(normalize_time(200.0, s), 0.5);
}

TEST(NormalizeTime, ExemplarHour) {
  const TimeScale s{0.0, 720.0};
  const double oracle = (684.0 - 0.0) / (720.0 - 0.0);
  EXPECT_EQ(normalize_time(684.0, s), oracle);
  EXPECT_NEAR(normalize_time(684.0, s), 0.95, 1e-15);
}

TEST(NormalizeTime, ClampsOutOfRange) {
  const TimeScale s{0.0, 720.0};
  EXPECT_EQ(normalize_time(-10.0, s), 0.0);
  EXPECT_EQ(normalize_time(800.0, s), 1.0);
}

TEST(NormalizeTime, DegenerateScaleIsRejected) {
  EXPECT_THROW(normalize_time(1.0, TimeScale{5.0, 5.0}), RangeError);
  EXPECT_THROW(denormalize_time(0.5, TimeScale{6.0, 5.0}), RangeError);
}

TEST(DenormalizeTime, Examples) {
  EXPECT_EQ(denormalize_time(0.5, TimeScale{100.0, 300.0}), 200.0);
  EXPECT_EQ(denormalize_time(0.0, TimeScale{37.25, 300.0}), 37.25);
  EXPECT_THROW(denormalize_time(1.0001, TimeScale{0, 1}), InputError);
  EXPECT_THROW(denormalize_time(-0.0001, TimeScale{0, 1}), InputError);
  EXPECT_THROW(denormalize_time(std::nan(""), TimeScale{0, 1}), InputError);
}

TEST(DenormalizeTime, InvertsNormalize) {
  Rng rng(1);
  for (int k = 0; k < 10; ++k) {
    const double lo = rng.uniform(-500, 500);
    const TimeScale s{lo, lo + rng.uniform(1, 2000)};
    for (int i = 0; i < 100; ++i) {
      const double t = rng.uniform(s.t_min, s.t_max);
      EXPECT_NEAR(denormalize_time(normalize_time(t, s), s), t, 1e-9);
    }
  }
}

TEST(TimeScale, FromSamples) {
  const std::vector<Sample> samples = {
      {"a", StageLabel::kSpore, 12.0, "x", Split::kTrain},
      {"b", StageLabel::kHyphae, 300.0, "x", Split::kTrain},
      {"c", StageLabel::kSpore, 4.5, "x", Split::kTrain},
  };
  EXPECT_EQ(TimeScale::from_samples(samples), (TimeScale{4.5, 300.0}));
  EXPECT_THROW(TimeScale::from_samples({}), DataError);
  EXPECT_THROW(TimeScale::from_samples(std::span(samples).first(1)), DataError);
}

TEST(ClassificationLoss, UniformLogitsGiveLnThree) {
  const Matrix logits = Matrix::Constant(4, 3, 0.7);
  const std::vector<int> labels = {0, 1, 2, 1};
  EXPECT_NEAR(classification_loss(logits, labels), std::log(3.0), 1e-12);
}

TEST(ClassificationLoss, SaturatedLogits) {
  Matrix logits(2, 3);
  logits << 20, -20, -20, -20, -20, 20;
  const std::vector<int> labels = {0, 2};
  const double l = classification_loss(logits, labels);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-8);
}

TEST(ClassificationLoss, HandComputedExample) {
  Matrix logits(1, 3);
  logits << 1, 2, 3;
  const std::vector<int> labels = {2};
  const double oracle = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  EXPECT_NEAR(classification_loss(logits, labels), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.4076, 1e-4);
}

TEST(ClassificationLoss, LargeLogitsStayFinite) {
  Matrix logits(1, 3);
  logits << 1000, 0, -1000;
  const std::vector<int> labels = {2};
  EXPECT_NEAR(classification_loss(logits, labels), 2000.0, 1e-9);
}

TEST(ClassificationLoss, LabelOutOfRangeIsInputError) {
  const Matrix logits = Matrix::Zero(1, 3);
  const std::vector<int> bad = {3};
  EXPECT_THROW(classification_loss(logits, bad), InputError);
  const std::vector<int> neg = {-1};
  EXPECT_THROW(classification_loss(logits, neg), InputError);
  const std::vector<int> two = {0, 1};
  EXPECT_THROW(classification_loss(logits, two), InputError);
}

TEST(ClassificationLoss, GradientMatchesCentralDifferences) {
  Rng rng(2);
  Matrix logits(4, 3);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 2 * rng.normal();
  const std::vector<int> labels = {2, 0, 1, 1};
  Matrix grad;
  classification_loss(logits, labels, &grad);
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    Matrix up = logits, down = logits;
    up.data()[k] += 1e-6;
    down.data()[k] -= 1e-6;
    const double numeric =
        (classification_loss(up, labels) - classification_loss(down, labels)) / 2e-6;
    EXPECT_NEAR(grad.data()[k], numeric, 1e-8);
  }
}

TEST(TimeLoss, Examples) {
  Vector a(2), b(2);
  a << 0.3, 0.6;
  EXPECT_EQ(time_loss(a, a), 0.0);
  a << 0, 1;
  b << 1, 0;
  EXPECT_EQ(time_loss(a, b), 1.0);
  a << 0.2, 0.4;
  b << 0.0, 0.8;
  double oracle = 0;
  for (int i = 0; i < 2; ++i) oracle += (a(i) - b(i)) * (a(i) - b(i));
  oracle /= 2;
  EXPECT_NEAR(time_loss(a, b), oracle, 1e-15);
  EXPECT_NEAR(time_loss(a, b), 0.10, 1e-12);
}

TEST(TimeLoss, SymmetricAndGradient) {
  Rng rng(3);
  Vector a(6), b(6);
  for (int i = 0; i < 6; ++i) {
    a(i) = rng.uniform();
    b(i) = rng.uniform();
  }
  EXPECT_EQ(time_loss(a, b), time_loss(b, a));
  Vector g;
  time_loss(a, b, &g);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(g(i), 2 * (a(i) - b(i)) / 6, 1e-15);
  EXPECT_THROW(time_loss(a, Vector::Zero(5)), InputError);
}

TEST(TotalLoss, Examples) {
  EXPECT_NEAR(total_loss(0.5, 0.1, 1, 1).l_total, 0.6, 1e-12);
  EXPECT_EQ(total_loss(0.5, 0.1, 2, 0).l_total, 1.0);
  EXPECT_NEAR(total_loss(0.0, 0.05, 0, 2).l_total, 0.1, 1e-12);
  const LossBreakdown b = total_loss(0.25, 0.75, 1, 1);
  EXPECT_EQ(b.l_class, 0.25);
  EXPECT_EQ(b.l_time, 0.75);
  EXPECT_THROW(total_loss(1, 1, -1, 1), ConfigError);
  EXPECT_THROW(total_loss(1, 1, 1, -0.5), ConfigError);
}

TEST(TrainConfig, Invariants) {
  TrainConfig cfg;
  cfg.alpha = 0;
  cfg.beta = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.neutral_prompt_rate = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_EQ(TrainConfig{}.epochs, 30);
  EXPECT_EQ(TrainConfig{}.batch_size, 32);
  EXPECT_EQ(TrainConfig{}.learning_rate, 1e-4);
}

TEST(BatchBounds, TailIsMergedIntoLastBatch) {
  EXPECT_EQ(batch_bounds(420, 32),
            (std::vector<std::size_t>{0, 32, 64, 96, 128, 160, 192, 224, 256, 288, 320, 352, 384,
                                      420}));
  EXPECT_EQ(batch_bounds(64, 32), (std::vector<std::size_t>{0, 32, 64}));
  EXPECT_EQ(batch_bounds(10, 32), (std::vector<std::size_t>{0, 10}));
  EXPECT_EQ(batch_bounds(0, 32), (std::vector<std::size_t>{0}));
  EXPECT_THROW(batch_bounds(10, 0), ConfigError);
}

TEST(Optimizer, AdamStepMatchesScalarOracle) {
  Parameter p("p", 1, 3);
  p.value << 1.0, -2.0, 0.5;
  Adam adam(0.01);
  const ParameterList params = {&p};
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0}, x[3] = {1.0, -2.0, 0.5};
  const double grads[2][3] = {{0.3, -0.1, 0.0}, {-0.2, 0.4, 1e-3}};
  for (int step = 1; step <= 2; ++step) {
    for (int j = 0; j < 3; ++j) p.grad(0, j) = grads[step - 1][j];
    adam.step(params);
    for (int j = 0; j < 3; ++j) {
      const double g = grads[step - 1][j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.999 * v[j] + 0.001 * g * g;
      const double mh = m[j] / (1 - std::pow(0.9, step));
      const double vh = v[j] / (1 - std::pow(0.999, step));
      x[j] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value(0, j), x[j], 1e-15);
    }
  }
}

TEST(Optimizer, SgdStep) {
  Parameter p("p", 1, 2);
  p.value << 1.0, 2.0;
  p.grad << 0.5, -1.0;
  Sgd sgd(0.1);
  sgd.step({&p});
  EXPECT_NEAR(p.value(0, 0), 0.95, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 2.1, 1e-15);
  EXPECT_EQ(optimizer_from_name("sgd"), OptimizerKind::kSgd);
  EXPECT_THROW(optimizer_from_name("lbfgs"), ConfigError);
}

CLIPTimeModel small_model(std::uint64_t seed, int image_size = 32) {
  EncoderConfig enc;
  enc.d = 16;
  ModelConfig mc;
  mc.d = 16;
  mc.n_attention_heads = 2;
  mc.ffn_hidden = 32;
  CLIPTimeModel model(enc, mc, image_size, Vocabulary::standard());
  model.init(seed);
  return model;
}

TEST(Descent, OneSmallStepLowersTheBatchLoss) {
  int successes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    CLIPTimeModel model = small_model(100 + trial);
    Rng rng(200 + trial);
    const GenConfig gen;
    std::vector<Matrix> inputs;
    std::vector<TokenIds> tokens;
    std::vector<int> labels;
    Vector t(8);
    for (int i = 0; i < 8; ++i) {
      const double hours = rng.uniform(gen.t_min, gen.t_max);
      const StageParams p = growth_params_from_time(hours, gen);
      inputs.push_back(image_to_input(render_stage_image(p, rng.next_u64(), 32)));
      tokens.push_back(model.tokenize(describe_sample(p.stage, hours, i, gen)));
      labels.push_back(stage_index(p.stage));
      t(i) = hours / gen.t_max;
    }
    model.zero_grad();
    const double before = run_batch(model, inputs, tokens, labels, t, 1, 1, true).loss.l_total;
    Adam adam(1e-4);
    adam.step(model.parameters());
    const double after = run_batch(model, inputs, tokens, labels, t, 1, 1, false).loss.l_total;
    if (after < before) ++successes;
  }
  EXPECT_GE(successes, 18);
}

TEST(History, WriteReadRoundTrip) {
  TempDir dir;
  History h;
  for (int e = 1; e <= 3; ++e) {
    h.push_back({e, total_loss(1.0 / e, 0.1 / 3, 1, 1), total_loss(1.1 / e, 0.2, 1, 1)});
  }
  write_history(dir / "history.tsv", h);
  EXPECT_EQ(read_history(dir / "history.tsv"), h);
}

class SmallFit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("fit");
    GenConfig gen;
    gen.n_per_stage = 20;
    gen.image_size = 32;
    gen.seed = 5;
    manifest_ = new Manifest(generate_dataset(gen, dir_->path()));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static TrainConfig config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.seed = 3;
    return cfg;
  }
  static TempDir* dir_;
  static Manifest* manifest_;
};
TempDir* SmallFit::dir_ = nullptr;
Manifest* SmallFit::manifest_ = nullptr;

TEST_F(SmallFit, HistoryBookkeeping) {
  ASSERT_EQ(manifest_->size(), 60u);
  CLIPTimeModel model = small_model(1);
  const FitResult r = fit(*manifest_, dir_->path(), model, config());
  ASSERT_EQ(r.history.size(), 2u);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const EpochRecord& e = r.history[i];
    EXPECT_EQ(e.epoch, static_cast<int>(i) + 1);
    for (const LossBreakdown& b : {e.train, e.val}) {
      EXPECT_TRUE(std::isfinite(b.l_total));
      EXPECT_GE(b.l_class, 0.0);
      EXPECT_GE(b.l_time, 0.0);
      EXPECT_NEAR(b.l_total, b.l_class + b.l_time, 1e-9);
    }
  }
  EXPECT_GE(r.best_epoch, 1);
  EXPECT_LE(r.best_epoch, 2);
  EXPECT_EQ(r.best_parameters.size(), model.parameters().size());
}

TEST_F(SmallFit, TimeScaleComesFromTrainSplitOnly) {
  CLIPTimeModel model = small_model(1);
  const FitResult r = fit(*manifest_, dir_->path(), model, config());
  EXPECT_EQ(r.scale, TimeScale::from_samples(select_split(*manifest_, Split::kTrain)));
}

TEST_F(SmallFit, SameSeedGivesBitIdenticalHistory) {
  CLIPTimeModel a = small_model(1);
  CLIPTimeModel b = small_model(1);
  const FitResult ra = fit(*manifest_, dir_->path(), a, config());
  const FitResult rb = fit(*manifest_, dir_->path(), b, config());
  EXPECT_EQ(ra.history, rb.history);
  const auto pa = std::as_const(a).parameters();
  const auto pb = std::as_const(b).parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}

TEST_F(SmallFit, WeightedLossAdditivity) {
  CLIPTimeModel model = small_model(1);
  TrainConfig cfg = config();
  cfg.epochs = 1;
  cfg.alpha = 0.5;
  cfg.beta = 3.0;
  const FitResult r = fit(*manifest_, dir_->path(), model, cfg);
  for (const LossBreakdown& b : {r.history[0].train, r.history[0].val}) {
    EXPECT_NEAR(b.l_total, 0.5 * b.l_class + 3.0 * b.l_time, 1e-9);
  }
}

TEST_F(SmallFit, EmptyValidationSplitIsDataError) {
  Manifest m = *manifest_;
  for (Sample& s : m) {
    if (s.split == Split::kVal) s.split = Split::kTrain;
  }
  CLIPTimeModel model = small_model(1);
  EXPECT_THROW(fit(m, dir_->path(), model, config()), DataError);
}

TEST_F(SmallFit, DivergenceIsReportedWithEpochAndBatch) {
  CLIPTimeModel model = small_model(1);
  TrainConfig cfg = config();
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.learning_rate = 1e200;
  try {
    fit(*manifest_, dir_->path(), model, cfg);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

}  // namespace
}  // namespace cliptime
