#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cliptime/synthgen.hpp"
#include "test_support.hpp"

namespace cliptime {
namespace {

namespace fs = std::filesystem;
using test_util::TempDir;

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

GenConfig small_config(int n_per_stage = 10, int size = 32) {
  GenConfig cfg;
  cfg.n_per_stage = n_per_stage;
  cfg.image_size = size;
  cfg.seed = 99;
  return cfg;
}

TEST(StageParams, BoundaryConventions) {
  const GenConfig cfg;
  EXPECT_EQ(growth_params_from_time(cfg.t_min, cfg).stage, StageLabel::kSpore);
  EXPECT_EQ(growth_params_from_time(239.999, cfg).stage, StageLabel::kSpore);
  EXPECT_EQ(growth_params_from_time(240.0, cfg).stage, StageLabel::kHyphae);
  EXPECT_EQ(growth_params_from_time(479.999, cfg).stage, StageLabel::kHyphae);
  EXPECT_EQ(growth_params_from_time(480.0, cfg).stage, StageLabel::kMycelium);
  EXPECT_EQ(growth_params_from_time(cfg.t_max, cfg).stage, StageLabel::kMycelium);
}

TEST(StageParams, ExemplarTimesLandInTheirStages) {
  const GenConfig cfg;
  EXPECT_EQ(growth_params_from_time(220.0, cfg).stage, StageLabel::kSpore);
  EXPECT_EQ(growth_params_from_time(684.0, cfg).stage, StageLabel::kMycelium);
}

TEST(StageParams, MinimalDensityAtStart) {
  const GenConfig cfg;
  const StageParams p = growth_params_from_time(cfg.t_min, cfg);
  EXPECT_EQ(p.density, 0.0);
  EXPECT_EQ(p.hyphal_growth, 0.0);
  EXPECT_EQ(p.mesh_links, 0.0);
}

TEST(StageParams, OutOfRangeTimeIsRejected) {
  const GenConfig cfg;
  EXPECT_THROW(growth_params_from_time(-0.5, cfg), RangeError);
  EXPECT_THROW(growth_params_from_time(720.5, cfg), RangeError);
}

TEST(StageParams, ContinuousFieldsAreNonDecreasing) {
  const GenConfig cfg;
  StageParams prev = growth_params_from_time(cfg.t_min, cfg);
  for (int i = 1; i <= 2000; ++i) {
    const double t = cfg.t_min + (cfg.t_max - cfg.t_min) * i / 2000.0;
    const StageParams p = growth_params_from_time(t, cfg);
    EXPECT_GE(p.density, prev.density);
    EXPECT_GE(p.spore_count, prev.spore_count);
    EXPECT_GE(p.spore_swell, prev.spore_swell);
    EXPECT_GE(p.hyphal_growth, prev.hyphal_growth);
    EXPECT_GE(p.mesh_links, prev.mesh_links);
    EXPECT_GE(stage_index(p.stage), stage_index(prev.stage));
    prev = p;
  }
}

TEST(GenConfig, RejectsInvalidSettings) {
  GenConfig cfg;
  cfg.n_per_stage = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.stage_boundaries = {500.0, 400.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.stage_boundaries = {0.0, 400.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.split_ratios = {0.7, 0.2, 0.2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.split_ratios = {1.1, -0.05, -0.05};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(GenConfig{}.validate());
}

TEST(Render, IsBitIdenticalForSameArguments) {
  const GenConfig cfg;
  const StageParams p = growth_params_from_time(400.0, cfg);
  EXPECT_EQ(render_stage_image(p, 1234, 64), render_stage_image(p, 1234, 64));
  EXPECT_NE(render_stage_image(p, 1234, 64), render_stage_image(p, 1235, 64));
}

TEST(Render, RejectsTinyImages) {
  const GenConfig cfg;
  EXPECT_THROW(render_stage_image(growth_params_from_time(10, cfg), 1, 31), ConfigError);
  EXPECT_NO_THROW(render_stage_image(growth_params_from_time(10, cfg), 1, 32));
}

TEST(Render, ForegroundIsMonotoneOverTenPointSweep) {
  const GenConfig cfg;
  for (std::uint64_t seed : {1ULL, 7ULL, 42ULL, 1000ULL, 0xdeadbeefULL}) {
    std::size_t prev = 0;
    for (int i = 0; i < 10; ++i) {
      const double t = cfg.t_min + (cfg.t_max - cfg.t_min) * i / 9.0;
      const std::size_t n =
          count_foreground(render_stage_image(growth_params_from_time(t, cfg), seed, 96));
      EXPECT_GE(n, prev) << "seed " << seed << " t " << t;
      prev = n;
    }
  }
}

TEST(Render, ForegroundCountMatchesPixelLoop) {
  const GenConfig cfg;
  const Image img = render_stage_image(growth_params_from_time(500, cfg), 3, 48);
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.pixel(x, y);
      if ((p[0] + p[1] + p[2]) / 3.0 < 170.0) ++n;
    }
  }
  EXPECT_EQ(count_foreground(img), n);
}

TEST(Render, SporeCoversLessThanMycelium) {
  const GenConfig cfg;
  const auto spore = render_stage_image(growth_params_from_time(120, cfg), 5, 96);
  const auto myc = render_stage_image(growth_params_from_time(600, cfg), 5, 96);
  EXPECT_LT(count_foreground(spore), count_foreground(myc));
}

TEST(Render, BackgroundIsNearWhite) {
  const GenConfig cfg;
  const Image img = render_stage_image(growth_params_from_time(0, cfg), 11, 64);
  double sum = 0;
  for (std::uint8_t v : img.rgb) sum += v;
  EXPECT_GT(sum / img.rgb.size(), 225.0);
}

TEST(Describe, MentionsStageAndIsDeterministic) {
  const GenConfig cfg;
  const std::string a = describe_sample(StageLabel::kSpore, 10.0, 0, cfg);
  EXPECT_NE(a.find("spore"), std::string::npos);
  const std::string b = describe_sample(StageLabel::kMycelium, 684.0, 1, cfg);
  EXPECT_NE(b.find("mycelium"), std::string::npos);
  EXPECT_EQ(describe_sample(StageLabel::kMycelium, 684.0, 1, cfg), b);
}

TEST(Describe, UsesAtLeastThreeTemplatesPerStage) {
  const GenConfig cfg;
  for (StageLabel stage : kAllStages) {
    const auto [lo, hi] = cfg.stage_band(stage);
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      seen.insert(describe_sample(stage, (lo + hi) / 2, seed, cfg));
    }
    EXPECT_GE(seen.size(), 3u);
    for (const auto& s : seen) {
      EXPECT_NE(s.find(stage_name(stage)), std::string::npos) << s;
      EXPECT_TRUE(s.starts_with("Mid ") || s.find(" mid ") != std::string::npos) << s;
    }
  }
}

TEST(Describe, CoarseTimePhraseFollowsBandThirds) {
  const GenConfig cfg;
  EXPECT_NE(describe_sample(StageLabel::kHyphae, 250, 0, cfg).find("arly"), std::string::npos);
  EXPECT_NE(describe_sample(StageLabel::kHyphae, 470, 0, cfg).find("late"), std::string::npos);
}

TEST(Describe, CorpusCoversEveryOutput) {
  const GenConfig cfg;
  const auto corpus = description_corpus();
  const std::set<std::string> all(corpus.begin(), corpus.end());
  EXPECT_TRUE(all.count(std::string(kNeutralPrompt)));
  for (StageLabel stage : kAllStages) {
    const auto [lo, hi] = cfg.stage_band(stage);
    for (int i = 0; i < 30; ++i) {
      const double t = lo + (hi - lo) * i / 30.0;
      EXPECT_TRUE(all.count(describe_sample(stage, t, i * 7919, cfg)));
    }
  }
}

TEST(FormatDouble, RoundTripsExactly) {
  for (double v : {0.0, 1.0 / 3.0, 684.0, 1e-300, 719.999999999, 0.1 + 0.2}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_THROW(parse_double("12abc"), InputError);
}

TEST(Manifest, WriteReadRoundTrip) {
  TempDir dir;
  const Manifest m = {
      {"images/spore/00000.png", StageLabel::kSpore, 12.5, "A spore", Split::kTrain},
      {"images/mycelium/00001.png", StageLabel::kMycelium, 700.0 / 3.0, "Mycelium", Split::kTest},
  };
  write_manifest(dir / "m.tsv", m);
  EXPECT_EQ(read_manifest(dir / "m.tsv"), m);
}

TEST(Manifest, MalformedLineIsDataError) {
  TempDir dir;
  std::ofstream(dir / "bad.tsv") << "# header\nimages/a.png\t0\tnot-a-number\tx\ttrain\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "missing.tsv"), DataError);
}

class GeneratedDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("synthgen");
    cfg_ = small_config(200, 32);
    manifest_ = new Manifest(generate_dataset(cfg_, dir_->path()));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static TempDir* dir_;
  static GenConfig cfg_;
  static Manifest* manifest_;
};
TempDir* GeneratedDataset::dir_ = nullptr;
GenConfig GeneratedDataset::cfg_;
Manifest* GeneratedDataset::manifest_ = nullptr;

TEST_F(GeneratedDataset, HasSixHundredRecordsTwoHundredPerStage) {
  ASSERT_EQ(manifest_->size(), 600u);
  std::map<StageLabel, int> per_stage;
  for (const Sample& s : *manifest_) ++per_stage[s.label];
  for (StageLabel stage : kAllStages) EXPECT_EQ(per_stage[stage], 200);
}

TEST_F(GeneratedDataset, StratifiedSplitCountsByRecount) {
  std::map<std::pair<StageLabel, Split>, int> counts;
  for (const Sample& s : read_manifest(dir_->path() / kManifestFile)) {
    ++counts[{s.label, s.split}];
  }
  for (StageLabel stage : kAllStages) {
    EXPECT_EQ((counts[{stage, Split::kTrain}]), 140);
    EXPECT_EQ((counts[{stage, Split::kVal}]), 30);
    EXPECT_EQ((counts[{stage, Split::kTest}]), 30);
  }
}

TEST_F(GeneratedDataset, StageTimeConsistency) {
  for (const Sample& s : *manifest_) {
    EXPECT_GE(s.timestamp_hours, cfg_.t_min);
    EXPECT_LE(s.timestamp_hours, cfg_.t_max);
    EXPECT_EQ(growth_params_from_time(s.timestamp_hours, cfg_).stage, s.label);
    EXPECT_NE(s.description.find(stage_name(s.label)), std::string::npos);
  }
}

TEST_F(GeneratedDataset, ManifestOnDiskMatchesReturnedValue) {
  EXPECT_EQ(read_manifest(dir_->path() / kManifestFile), *manifest_);
}

TEST_F(GeneratedDataset, ManifestCompleteness) {
  std::multiset<std::string> listed;
  for (const Sample& s : *manifest_) {
    EXPECT_TRUE(fs::exists(dir_->path() / s.image_path)) << s.image_path;
    listed.insert(s.image_path);
  }
  std::multiset<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(dir_->path() / "images")) {
    if (e.is_regular_file()) {
      on_disk.insert(fs::relative(e.path(), dir_->path()).generic_string());
    }
  }
  EXPECT_EQ(listed, on_disk);
  for (const auto& p : listed) EXPECT_EQ(listed.count(p), 1u);
}

TEST_F(GeneratedDataset, SplitFilesListEachSampleOnce) {
  std::multiset<std::string> from_files;
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::ifstream in(dir_->path() / "splits" / (std::string(split_name(split)) + ".txt"));
    std::string line;
    while (std::getline(in, line)) from_files.insert(line);
  }
  std::multiset<std::string> listed;
  for (const Sample& s : *manifest_) listed.insert(s.image_path);
  EXPECT_EQ(from_files, listed);
}

TEST_F(GeneratedDataset, ImagesHaveConfiguredSize) {
  const Image img = read_png(dir_->path() / manifest_->front().image_path);
  EXPECT_EQ(img.width, 32);
  EXPECT_EQ(img.height, 32);
}

TEST(Generate, RepeatedRunsAreByteIdentical) {
  TempDir a("gen-a");
  TempDir b("gen-b");
  const GenConfig cfg = small_config(6, 48);
  const Manifest ma = generate_dataset(cfg, a.path());
  const Manifest mb = generate_dataset(cfg, b.path());
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(read_bytes(a / "manifest.tsv"), read_bytes(b / "manifest.tsv"));
  for (const Sample& s : ma) {
    EXPECT_EQ(read_bytes(a.path() / s.image_path), read_bytes(b.path() / s.image_path));
  }
}

TEST(Generate, DifferentSeedsDiffer) {
  TempDir a("gen-a");
  TempDir b("gen-b");
  GenConfig cfg = small_config(4, 32);
  const Manifest ma = generate_dataset(cfg, a.path());
  cfg.seed += 1;
  const Manifest mb = generate_dataset(cfg, b.path());
  EXPECT_NE(ma, mb);
}

TEST(Generate, ZeroSamplesIsConfigError) {
  TempDir dir;
  GenConfig cfg = small_config(0);
  EXPECT_THROW(generate_dataset(cfg, dir.path()), ConfigError);
}

TEST(Generate, UnwritableDirectoryIsIoError) {
  TempDir dir;
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(generate_dataset(small_config(2), dir / "file"), IoError);
}

TEST(Generate, TimestampsAreSpreadAcrossEachBand) {
  TempDir dir;
  const GenConfig cfg = small_config(60, 32);
  const Manifest m = generate_dataset(cfg, dir.path());
  for (StageLabel stage : kAllStages) {
    const auto [lo, hi] = cfg.stage_band(stage);
    int lower_half = 0;
    int total = 0;
    for (const Sample& s : m) {
      if (s.label != stage) continue;
      ++total;
      if (s.timestamp_hours < (lo + hi) / 2) ++lower_half;
    }
    EXPECT_GT(lower_half, total / 4);
    EXPECT_LT(lower_half, 3 * total / 4);
  }
}

TEST(Names, StageAndSplitRoundTrip) {
  for (StageLabel s : kAllStages) {
    EXPECT_EQ(stage_from_name(stage_name(s)), s);
    EXPECT_EQ(stage_from_index(stage_index(s)), s);
  }
  EXPECT_EQ(stage_index(StageLabel::kSpore), 0);
  EXPECT_EQ(stage_index(StageLabel::kHyphae), 1);
  EXPECT_EQ(stage_index(StageLabel::kMycelium), 2);
  EXPECT_THROW(stage_from_index(3), RangeError);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    EXPECT_EQ(split_from_name(split_name(s)), s);
  }
}

TEST(Png, WriteReadRoundTrip) {
  TempDir dir;
  Image img(7, 5);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 37);
  write_png(dir / "x.png", img);
  EXPECT_EQ(read_png(dir / "x.png"), img);
  std::ofstream(dir / "junk.png") << "not a png";
  EXPECT_THROW(read_png(dir / "junk.png"), DataError);
}

}  // namespace
}  // namespace cliptime
