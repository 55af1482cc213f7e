#include "cliptime/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <system_error>

#include "cliptime/common.hpp"

namespace fs = std::filesystem;

namespace cliptime {
namespace {

// Reference geometry is expressed for a 96 px canvas and scaled linearly.
constexpr double kReferenceSize = 96.0;
constexpr int kMaxSpores = 10;
constexpr int kMaxFilamentSteps = 72;
constexpr int kMaxMeshLinks = 48;
constexpr int kMeshLinkSteps = 26;
constexpr double kBranchProbability = 0.035;
constexpr int kMaxBranchDepth = 2;
constexpr double kFilamentRadius = 0.9;
constexpr double kMeshRadius = 0.8;
constexpr int kForegroundLuma = 170;

// Seed streams. Each structural layer draws from its own stream so the
// drawn structure at a later time is a superset of the structure before.
enum Stream : std::uint64_t {
  kSporeStream = 1,
  kFilamentStream = 2,
  kMeshStream = 3,
  kBackgroundStream = 4,
  kPaletteStream = 5,
  kTimeStream = 6,
  kSplitStream = 7,
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

struct Point {
  double x;
  double y;
};

struct Spore {
  Point center;
  double radius;
  double aspect;
  double angle;
};

struct Filament {
  int spore = 0;     // owning spore; hidden until that spore is visible
  double birth = 0;  // growth budget consumed before this filament starts
  std::vector<Point> path;
};

struct Structure {
  std::vector<Spore> spores;
  std::vector<Filament> filaments;
  std::vector<std::vector<Point>> mesh;
};

std::vector<Point> random_walk(Point start, double heading, int steps,
                               double step_len, Rng& rng) {
  std::vector<Point> path;
  path.reserve(steps + 1);
  path.push_back(start);
  for (int i = 0; i < steps; ++i) {
    heading += 0.18 * rng.normal();
    start.x += step_len * std::cos(heading);
    start.y += step_len * std::sin(heading);
    path.push_back(start);
  }
  return path;
}

void grow_branches(std::vector<Filament>& out, const Filament& parent,
                   int depth, double scale, Rng& rng) {
  out.push_back(parent);
  if (depth >= kMaxBranchDepth) return;
  const std::size_t n = parent.path.size();
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (rng.uniform() >= kBranchProbability) continue;
    const Point a = parent.path[k - 1];
    const Point b = parent.path[k];
    const double heading = std::atan2(b.y - a.y, b.x - a.x);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double offset = side * rng.uniform(0.4, 1.1);
    Filament branch;
    branch.spore = parent.spore;
    branch.birth = parent.birth + static_cast<double>(k);
    const int steps = kMaxFilamentSteps - static_cast<int>(k);
    branch.path = random_walk(b, heading + offset, steps, scale, rng);
    grow_branches(out, branch, depth + 1, scale, rng);
  }
}

Structure build_structure(std::uint64_t seed, double scale, int size) {
  Structure s;
  Rng spore_rng(derive_seed(seed, kSporeStream));
  for (int i = 0; i < kMaxSpores; ++i) {
    Spore sp;
    sp.center = {spore_rng.uniform(0.12, 0.88) * size,
                 spore_rng.uniform(0.12, 0.88) * size};
    sp.radius = spore_rng.uniform(1.7, 2.6) * scale;
    sp.aspect = spore_rng.uniform(1.0, 1.6);
    sp.angle = spore_rng.uniform(0.0, std::numbers::pi);
    s.spores.push_back(sp);
  }

  Rng fil_rng(derive_seed(seed, kFilamentStream));
  std::vector<std::size_t> primaries;
  for (int i = 0; i < kMaxSpores; ++i) {
    const int n_primary = fil_rng.uniform() < 0.5 ? 1 : 2;
    for (int p = 0; p < n_primary; ++p) {
      Filament f;
      f.spore = i;
      f.birth = 0.0;
      f.path = random_walk(s.spores[i].center,
                           fil_rng.uniform(0.0, 2 * std::numbers::pi),
                           kMaxFilamentSteps, scale, fil_rng);
      primaries.push_back(s.filaments.size());
      grow_branches(s.filaments, f, 0, scale, fil_rng);
    }
  }

  Rng mesh_rng(derive_seed(seed, kMeshStream));
  for (int j = 0; j < kMaxMeshLinks; ++j) {
    const Filament& anchor =
        s.filaments[primaries[mesh_rng.below(primaries.size())]];
    // Anchors sit on the part of a primary filament that is always drawn
    // once the mesh starts forming.
    const Point start = anchor.path[mesh_rng.below(40)];
    s.mesh.push_back(random_walk(start,
                                 mesh_rng.uniform(0.0, 2 * std::numbers::pi),
                                 kMeshLinkSteps, scale, mesh_rng));
  }
  return s;
}

class Canvas {
 public:
  explicit Canvas(Image& image) : image_(image) {}

  void disc(Point c, double r, const std::array<std::uint8_t, 3>& color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x - r)));
    const int x1 = std::min(image_.width - 1, static_cast<int>(std::ceil(c.x + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y - r)));
    const int y1 = std::min(image_.height - 1, static_cast<int>(std::ceil(c.y + r)));
    const double r2 = r * r;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - c.x;
        const double dy = y + 0.5 - c.y;
        if (dx * dx + dy * dy <= r2) put(x, y, color);
      }
    }
  }

  void ellipse(const Spore& sp, double swell,
               const std::array<std::uint8_t, 3>& color) {
    const double a = sp.radius * sp.aspect * swell;
    const double b = sp.radius * swell;
    const double ca = std::cos(sp.angle);
    const double sa = std::sin(sp.angle);
    const int x0 = std::max(0, static_cast<int>(std::floor(sp.center.x - a)));
    const int x1 = std::min(image_.width - 1, static_cast<int>(std::ceil(sp.center.x + a)));
    const int y0 = std::max(0, static_cast<int>(std::floor(sp.center.y - a)));
    const int y1 = std::min(image_.height - 1, static_cast<int>(std::ceil(sp.center.y + a)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - sp.center.x;
        const double dy = y + 0.5 - sp.center.y;
        const double u = (dx * ca + dy * sa) / a;
        const double v = (-dx * sa + dy * ca) / b;
        if (u * u + v * v <= 1.0) put(x, y, color);
      }
    }
  }

  /// Draws the first `length` units of a unit-step polyline.
  void polyline(const std::vector<Point>& path, double length, double step,
                double radius, const std::array<std::uint8_t, 3>& color) {
    if (length <= 0.0 || path.size() < 2) return;
    const double max_len = static_cast<double>(path.size() - 1);
    length = std::min(length, max_len);
    const int full = static_cast<int>(std::floor(length));
    for (int k = 0; k < full; ++k) segment(path[k], path[k + 1], 1.0, step, radius, color);
    const double rest = length - full;
    if (rest > 0.0 && full + 1 < static_cast<int>(path.size())) {
      segment(path[full], path[full + 1], rest, step, radius, color);
    }
  }

 private:
  void segment(Point a, Point b, double fraction, double step, double radius,
               const std::array<std::uint8_t, 3>& color) {
    const int stamps = std::max(1, static_cast<int>(std::ceil(2.0 * fraction)));
    for (int i = 0; i <= stamps; ++i) {
      const double s = fraction * static_cast<double>(i) / stamps;
      disc({a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)}, radius * step, color);
    }
  }

  void put(int x, int y, const std::array<std::uint8_t, 3>& color) {
    std::uint8_t* p = image_.pixel(x, y);
    p[0] = color[0];
    p[1] = color[1];
    p[2] = color[2];
  }

  Image& image_;
};

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

constexpr std::array<std::array<std::string_view, 3>, kNumStages> kTemplates = {{
    {"{} spore stage with small round spores scattered on the plate",
     "a {} culture of fungal spores before germination",
     "microscopy image of isolated spore cells at a {} time"},
    {"{} hyphae stage with branching filaments growing from germinated spores",
     "a {} culture showing thin hyphae extending across the plate",
     "microscopy image of elongating hyphae at a {} time"},
    {"{} mycelium stage with a dense interconnected filament network",
     "a {} culture covered by mature mycelium",
     "microscopy image of a dense mycelium mesh at a {} time"},
}};

constexpr std::array<std::string_view, 3> kTimePhrases = {"early", "mid", "late"};

std::string fill_template(std::string_view tmpl, std::string_view phrase) {
  std::string out(tmpl);
  const auto pos = out.find("{}");
  out.replace(pos, 2, phrase);
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

std::string_view stage_name(StageLabel stage) noexcept {
  switch (stage) {
    case StageLabel::kSpore: return "spore";
    case StageLabel::kHyphae: return "hyphae";
    case StageLabel::kMycelium: return "mycelium";
  }
  return "unknown";
}

StageLabel stage_from_index(int index) {
  if (index < 0 || index >= kNumStages) {
    throw RangeError("stage index out of range: " + std::to_string(index));
  }
  return static_cast<StageLabel>(index);
}

StageLabel stage_from_name(std::string_view name) {
  for (StageLabel s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw InputError("unknown stage name: " + std::string(name));
}

std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InputError("unknown split: " + std::string(name));
}

void GenConfig::validate() const {
  if (n_per_stage <= 0) throw ConfigError("gen.n_per_stage must be positive");
  if (image_size < 32) throw ConfigError("gen.image_size must be at least 32");
  const auto [t1, t2] = stage_boundaries;
  if (!(t_min < t1 && t1 < t2 && t2 < t_max)) {
    throw ConfigError("gen: require t_min < T1 < T2 < t_max");
  }
  double sum = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0)) throw ConfigError("gen.split_ratios must be nonnegative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("gen.split_ratios must sum to 1");
  }
}

std::pair<double, double> GenConfig::stage_band(StageLabel stage) const {
  switch (stage) {
    case StageLabel::kSpore: return {t_min, stage_boundaries[0]};
    case StageLabel::kHyphae: return {stage_boundaries[0], stage_boundaries[1]};
    case StageLabel::kMycelium: return {stage_boundaries[1], t_max};
  }
  return {t_min, t_max};
}

StageParams growth_params_from_time(double t, const GenConfig& cfg) {
  if (!(t >= cfg.t_min && t <= cfg.t_max)) {
    throw RangeError("timestamp " + format_double(t) + " h outside [" +
                     format_double(cfg.t_min) + ", " + format_double(cfg.t_max) +
                     "]");
  }
  const auto [t1, t2] = cfg.stage_boundaries;
  StageParams p;
  p.stage = t < t1   ? StageLabel::kSpore
            : t < t2 ? StageLabel::kHyphae
                     : StageLabel::kMycelium;
  p.density = (t - cfg.t_min) / (cfg.t_max - cfg.t_min);

  const double spore_phase = clamp01((t - cfg.t_min) / (t1 - cfg.t_min));
  p.spore_count = 3.0 + 7.0 * spore_phase;
  p.spore_swell = 1.0 + 0.35 * spore_phase;

  // Germ tubes emerge over the first 4% of the hyphae band, so the
  // parameters stay continuous while the stage change is still visible.
  const double hyphae_phase = clamp01((t - t1) / (t2 - t1));
  const double emergence = clamp01((t - t1) / (0.04 * (t2 - t1)));
  const double mycelium_phase = clamp01((t - t2) / (cfg.t_max - t2));
  const double mesh_onset = clamp01((t - t2) / (0.04 * (cfg.t_max - t2)));
  p.hyphal_growth = 6.0 * emergence + 42.0 * hyphae_phase + 20.0 * mycelium_phase;
  p.mesh_links = 16.0 * mesh_onset + 32.0 * mycelium_phase;
  return p;
}

bool is_foreground(const std::uint8_t* rgb) noexcept {
  return (int(rgb[0]) + int(rgb[1]) + int(rgb[2])) < 3 * kForegroundLuma;
}

std::size_t count_foreground(const Image& image) noexcept {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 2 < image.rgb.size(); i += 3) {
    if (is_foreground(&image.rgb[i])) ++n;
  }
  return n;
}

Image render_stage_image(const StageParams& params, std::uint64_t seed,
                         int image_size) {
  if (image_size < 32) {
    throw ConfigError("image_size must be at least 32, got " +
                      std::to_string(image_size));
  }
  const double scale = image_size / kReferenceSize;
  Image image(image_size, image_size);

  Rng palette(derive_seed(seed, kPaletteStream));
  const double bg_level = 240.0 + palette.uniform(-4.0, 4.0);
  const std::array<double, 3> bg_tint = {palette.uniform(-2, 2), palette.uniform(-2, 2),
                                         palette.uniform(-2, 2)};
  const double fg_jitter = palette.uniform(-12.0, 12.0);
  const std::array<std::uint8_t, 3> hypha_color = {
      clamp_byte(70 + fg_jitter), clamp_byte(55 + fg_jitter * 0.8),
      clamp_byte(38 + fg_jitter * 0.5)};
  const std::array<std::uint8_t, 3> spore_color = {
      clamp_byte(45 + fg_jitter * 0.5), clamp_byte(35 + fg_jitter * 0.4),
      clamp_byte(28 + fg_jitter * 0.3)};
  const std::array<std::uint8_t, 3> mesh_color = {
      clamp_byte(78 + fg_jitter * 0.5), clamp_byte(86 + fg_jitter * 0.5),
      clamp_byte(108 + fg_jitter * 0.5)};

  Rng noise(derive_seed(seed, kBackgroundStream));
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double n = noise.uniform(-5.0, 5.0);
      std::uint8_t* p = image.pixel(x, y);
      for (int c = 0; c < 3; ++c) p[c] = clamp_byte(bg_level + bg_tint[c] + n);
    }
  }

  const Structure s = build_structure(seed, scale, image_size);
  Canvas canvas(image);

  const int visible_spores =
      std::clamp(static_cast<int>(std::floor(params.spore_count)), 0, kMaxSpores);
  for (int i = 0; i < visible_spores; ++i) {
    canvas.ellipse(s.spores[i], params.spore_swell, spore_color);
  }

  for (const Filament& f : s.filaments) {
    if (f.spore >= visible_spores) continue;
    canvas.polyline(f.path, params.hyphal_growth - f.birth, 1.0, kFilamentRadius * scale,
                    hypha_color);
  }

  const int links =
      std::clamp(static_cast<int>(std::floor(params.mesh_links)), 0, kMaxMeshLinks);
  for (int j = 0; j < links; ++j) {
    canvas.polyline(s.mesh[j], static_cast<double>(kMeshLinkSteps), 1.0,
                    kMeshRadius * scale, mesh_color);
  }
  return image;
}

std::string describe_sample(StageLabel stage, double t, std::uint64_t template_seed,
                            const GenConfig& cfg) {
  if (!(t >= cfg.t_min && t <= cfg.t_max)) {
    throw RangeError("timestamp outside the generation range");
  }
  const auto [lo, hi] = cfg.stage_band(stage);
  const double frac = clamp01((t - lo) / (hi - lo));
  const int phrase = frac < 1.0 / 3.0 ? 0 : frac < 2.0 / 3.0 ? 1 : 2;
  Rng rng(template_seed);
  const auto& options = kTemplates[stage_index(stage)];
  return fill_template(options[rng.below(options.size())], kTimePhrases[phrase]);
}

std::vector<std::string> description_corpus() {
  std::vector<std::string> corpus;
  for (const auto& stage_templates : kTemplates) {
    for (std::string_view tmpl : stage_templates) {
      for (std::string_view phrase : kTimePhrases) {
        corpus.push_back(fill_template(tmpl, phrase));
      }
    }
  }
  corpus.emplace_back(kNeutralPrompt);
  return corpus;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw InputError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "# image_path\tlabel_index\ttimestamp_hours\tdescription\tsplit\n";
  for (const Sample& s : manifest) {
    out << s.image_path << '\t' << stage_index(s.label) << '\t'
        << format_double(s.timestamp_hours) << '\t' << s.description << '\t'
        << split_name(s.split) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  Manifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 5) {
      throw DataError(where + ": expected 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    try {
      Sample s;
      s.image_path = fields[0];
      int label = -1;
      const auto res = std::from_chars(fields[1].data(),
                                       fields[1].data() + fields[1].size(), label);
      if (res.ec != std::errc() || res.ptr != fields[1].data() + fields[1].size()) {
        throw InputError("bad label index '" + fields[1] + "'");
      }
      s.label = stage_from_index(label);
      s.timestamp_hours = parse_double(fields[2]);
      s.description = fields[3];
      s.split = split_from_name(fields[4]);
      if (s.image_path.empty() || s.description.empty()) {
        throw InputError("empty image path or description");
      }
      manifest.push_back(std::move(s));
    } catch (const Error& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return manifest;
}

std::vector<Sample> select_split(const Manifest& manifest, Split split) {
  std::vector<Sample> out;
  for (const Sample& s : manifest) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

Manifest generate_dataset(const GenConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  for (StageLabel stage : kAllStages) {
    fs::create_directories(out_dir / "images" / stage_name(stage), ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  fs::create_directories(out_dir / "splits", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const int n = cfg.n_per_stage;
  Manifest manifest;
  manifest.reserve(std::size_t(n) * kNumStages);

  for (StageLabel stage : kAllStages) {
    const int si = stage_index(stage);
    // Stratified split: shuffle this stage's slots, then cut by ratio.
    std::vector<int> order(n);
    for (int k = 0; k < n; ++k) order[k] = k;
    Rng split_rng(derive_seed(cfg.seed, kSplitStream * 1000 + si));
    shuffle(order, split_rng);
    const int n_train = static_cast<int>(std::lround(n * cfg.split_ratios[0]));
    const int n_val = std::min(n - n_train,
                               static_cast<int>(std::lround(n * cfg.split_ratios[1])));
    std::vector<Split> split_of(n, Split::kTest);
    for (int r = 0; r < n; ++r) {
      split_of[order[r]] = r < n_train ? Split::kTrain
                           : r < n_train + n_val ? Split::kVal
                                                 : Split::kTest;
    }

    const auto [lo, hi] = cfg.stage_band(stage);
    for (int k = 0; k < n; ++k) {
      const std::uint64_t index = std::uint64_t(si) * n + k;
      const std::uint64_t sample_seed = derive_seed(cfg.seed, index);
      Rng time_rng(derive_seed(sample_seed, kTimeStream));
      double t = lo + (hi - lo) * time_rng.uniform();
      if (stage != StageLabel::kMycelium && t >= hi) t = std::nextafter(hi, lo);

      const StageParams params = growth_params_from_time(t, cfg);
      const Image image = render_stage_image(params, sample_seed, cfg.image_size);

      char name[32];
      std::snprintf(name, sizeof(name), "%05llu.png",
                    static_cast<unsigned long long>(index));
      const std::string rel =
          "images/" + std::string(stage_name(stage)) + "/" + name;
      write_png(out_dir / rel, image);

      manifest.push_back(Sample{rel, params.stage, t,
                                describe_sample(stage, t, sample_seed, cfg),
                                split_of[k]});
    }
  }

  write_manifest(out_dir / kManifestFile, manifest);
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto path = out_dir / "splits" / (std::string(split_name(split)) + ".txt");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const Sample& s : manifest) {
      if (s.split == split) out << s.image_path << '\n';
    }
  }
  return manifest;
}

}  // namespace cliptime
