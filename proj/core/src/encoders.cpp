#include "cliptime/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include "cliptime/synthgen.hpp"

namespace cliptime {
namespace {

constexpr double kNormFloor = 1e-12;

std::vector<Conv2d> build_convs(VisionArch arch, int image_size) {
  std::vector<Conv2d> convs;
  if (arch == VisionArch::kCompactConv) {
    int side = image_size;
    int channels = 3;
    int index = 0;
    for (int out_channels : {16, 32, 64}) {
      Conv2d::Geometry g;
      g.in_height = side;
      g.in_width = side;
      g.in_channels = channels;
      g.out_channels = out_channels;
      g.kernel = 3;
      g.stride = 2;
      g.padding = 1;
      convs.emplace_back("image.conv" + std::to_string(index++), g);
      side = g.out_height();
      channels = out_channels;
    }
  } else {
    Conv2d::Geometry g;
    g.in_height = image_size;
    g.in_width = image_size;
    g.in_channels = 3;
    g.out_channels = 128;
    g.kernel = 8;
    g.stride = 8;
    g.padding = 0;
    convs.emplace_back("image.patch", g);
  }
  return convs;
}

}  // namespace

std::string_view vision_arch_name(VisionArch arch) noexcept {
  return arch == VisionArch::kCompactConv ? "compact-conv" : "patch-mlp";
}

VisionArch vision_arch_from_name(std::string_view name) {
  if (name == "compact-conv") return VisionArch::kCompactConv;
  if (name == "patch-mlp") return VisionArch::kPatchMlp;
  throw ConfigError("unknown vision_arch '" + std::string(name) +
                    "' (expected compact-conv or patch-mlp)");
}

void EncoderConfig::validate() const {
  if (d < 8) throw ConfigError("encoder.d must be at least 8");
  if (max_tokens < 4) throw ConfigError("encoder.max_tokens must be at least 4");
  if (vocab_size <= 0) throw ConfigError("encoder.vocab_size must be positive");
}

// ---------------------------------------------------------------- vocabulary

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (!std::ispunct(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[kPad] != kPadToken ||
      tokens_[kUnknown] != kUnknownToken) {
    tokens_.insert(tokens_.begin(), {std::string(kPadToken), std::string(kUnknownToken)});
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnknownToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::standard() {
  auto corpus = description_corpus();
  for (StageLabel s : kAllStages) corpus.emplace_back(stage_name(s));
  return build(corpus);
}

int Vocabulary::id(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnknown : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

TokenIds tokenize(std::string_view text, const Vocabulary& vocab,
                  const EncoderConfig& cfg) {
  if (std::all_of(text.begin(), text.end(),
                  [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
    throw InputError("cannot tokenize empty text");
  }
  TokenIds ids(cfg.max_tokens, Vocabulary::kPad);
  const auto words = split_words(text);
  const std::size_t n = std::min<std::size_t>(words.size(), cfg.max_tokens);
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id(words[i]);
  return ids;
}

// ------------------------------------------------------------- image encoder

Matrix image_to_input(const Image& image) {
  if (image.rgb.size() != std::size_t(image.width) * image.height * 3) {
    throw ShapeError("image must have exactly 3 channels");
  }
  Matrix x(Eigen::Index(image.width) * image.height, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = 1.0 - image.rgb[i] / 255.0;
  }
  return x;
}

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, int image_size)
    : image_size_(image_size), convs_(build_convs(cfg.vision_arch, image_size)) {
  if (image_size < 32) throw ConfigError("image side must be at least 32");
  projection_ = Linear("image.projection", convs_.back().geometry().out_channels, cfg.d);
}

void ImageEncoder::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng);
  projection_.init(rng);
}

Matrix ImageEncoder::forward(std::span<const Matrix> inputs,
                             ImageEncoderCache* cache) const {
  const Eigen::Index batch = static_cast<Eigen::Index>(inputs.size());
  Matrix pooled(batch, convs_.back().geometry().out_channels);
  if (cache) cache->samples.assign(inputs.size(), {});
  for (Eigen::Index b = 0; b < batch; ++b) {
    Matrix act = inputs[b];
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      Matrix cols;
      Matrix pre = convs_[l].forward(act, cache ? &cols : nullptr);
      act = relu(pre);
      if (cache) {
        cache->samples[b].columns.push_back(std::move(cols));
        cache->samples[b].pre_activation.push_back(std::move(pre));
      }
    }
    pooled.row(b) = act.colwise().mean();
  }
  Matrix out = projection_.forward(pooled);
  if (cache) cache->pooled = std::move(pooled);
  return out;
}

Matrix ImageEncoder::encode(const Image& image) const {
  if (image.width != image_size_ || image.height != image_size_) {
    throw ShapeError("image is " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + ", encoder expects " +
                     std::to_string(image_size_) + "x" + std::to_string(image_size_));
  }
  const Matrix input = image_to_input(image);
  return forward(std::span<const Matrix>(&input, 1));
}

void ImageEncoder::backward(const ImageEncoderCache& cache, const Matrix& d_embedding) {
  const Matrix d_pooled = projection_.backward(cache.pooled, d_embedding);
  for (std::size_t b = 0; b < cache.samples.size(); ++b) {
    const auto& sample = cache.samples[b];
    const Eigen::Index positions = sample.pre_activation.back().rows();
    Matrix d_act = d_pooled.row(static_cast<Eigen::Index>(b))
                       .replicate(positions, 1) /
                   static_cast<double>(positions);
    for (std::size_t l = convs_.size(); l-- > 0;) {
      const Matrix d_pre = relu_backward(sample.pre_activation[l], d_act);
      if (l == 0) {
        // Input gradient is not needed; accumulate weights only.
        convs_[0].weight.grad.noalias() += d_pre.transpose() * sample.columns[0];
        convs_[0].bias.grad.row(0) += d_pre.colwise().sum();
      } else {
        d_act = convs_[l].backward(sample.columns[l], d_pre);
      }
    }
  }
}

void ImageEncoder::collect(ParameterList& out) {
  for (auto& c : convs_) c.collect(out);
  projection_.collect(out);
}

// -------------------------------------------------------------- text encoder

TextEncoder::TextEncoder(const EncoderConfig& cfg)
    : embedding_("text.embedding", cfg.vocab_size, cfg.d),
      fc1_("text.fc1", cfg.d, cfg.d),
      fc2_("text.fc2", cfg.d, cfg.d) {}

void TextEncoder::init(Rng& rng) {
  for (Eigen::Index i = 0; i < embedding_.value.size(); ++i) {
    embedding_.value.data()[i] = 0.1 * rng.normal();
  }
  fc1_.init(rng);
  fc2_.init(rng);
}

Matrix TextEncoder::forward(std::span<const TokenIds> batch, TextEncoderCache* cache) const {
  const Eigen::Index d = embedding_.value.cols();
  const Eigen::Index vocab = embedding_.value.rows();
  Matrix pooled = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), d);
  std::vector<int> counts(batch.size(), 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (int id : batch[b]) {
      if (id < 0 || id >= vocab) {
        throw InputError("token id " + std::to_string(id) +
                         " outside vocabulary of size " + std::to_string(vocab));
      }
      if (id == Vocabulary::kPad) continue;
      pooled.row(b) += embedding_.value.row(id);
      ++counts[b];
    }
    // All-padding input keeps the zero vector.
    if (counts[b] > 0) pooled.row(b) /= static_cast<double>(counts[b]);
  }
  Matrix hidden_pre = fc1_.forward(pooled);
  Matrix hidden = relu(hidden_pre);
  Matrix out = fc2_.forward(hidden);
  if (cache) {
    cache->tokens.assign(batch.begin(), batch.end());
    cache->counts = std::move(counts);
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

RowVector TextEncoder::encode(const TokenIds& tokens) const {
  return forward(std::span<const TokenIds>(&tokens, 1)).row(0);
}

void TextEncoder::backward(const TextEncoderCache& cache, const Matrix& d_embedding) {
  const Matrix d_hidden = fc2_.backward(cache.hidden, d_embedding);
  const Matrix d_pooled =
      fc1_.backward(cache.pooled, relu_backward(cache.hidden_pre, d_hidden));
  for (std::size_t b = 0; b < cache.tokens.size(); ++b) {
    if (cache.counts[b] == 0) continue;
    const double scale = 1.0 / cache.counts[b];
    for (int id : cache.tokens[b]) {
      if (id == Vocabulary::kPad) continue;
      embedding_.grad.row(id) += scale * d_pooled.row(static_cast<Eigen::Index>(b));
    }
  }
}

void TextEncoder::collect(ParameterList& out) {
  out.push_back(&embedding_);
  fc1_.collect(out);
  fc2_.collect(out);
}

// -------------------------------------------------------------------- fusion

Matrix fuse(const Matrix& image, const Matrix& text, bool normalize, FuseCache* cache) {
  if (image.rows() != text.rows() || image.cols() != text.cols()) {
    throw ShapeError("fuse: embedding shapes differ (" + std::to_string(image.rows()) +
                     "x" + std::to_string(image.cols()) + " vs " +
                     std::to_string(text.rows()) + "x" + std::to_string(text.cols()) + ")");
  }
  if (!normalize) {
    if (cache) cache->normalized = false;
    return image + text;
  }
  auto unit = [](const Matrix& x, Vector& norms) {
    Matrix u = Matrix::Zero(x.rows(), x.cols());
    norms.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      norms(r) = x.row(r).norm();
      if (norms(r) > kNormFloor) u.row(r) = x.row(r) / norms(r);
    }
    return u;
  };
  Vector image_norm, text_norm;
  Matrix iu = unit(image, image_norm);
  Matrix tu = unit(text, text_norm);
  Matrix out = iu + tu;
  if (cache) {
    cache->normalized = true;
    cache->image_unit = std::move(iu);
    cache->text_unit = std::move(tu);
    cache->image_norm = std::move(image_norm);
    cache->text_norm = std::move(text_norm);
  }
  return out;
}

RowVector fuse(const RowVector& image, const RowVector& text, bool normalize) {
  return fuse(Matrix(image), Matrix(text), normalize).row(0);
}

std::pair<Matrix, Matrix> fuse_backward(const FuseCache& cache, const Matrix& d_fused) {
  if (!cache.normalized) return {d_fused, d_fused};
  auto through_norm = [&](const Matrix& unit, const Vector& norms) {
    Matrix dx = Matrix::Zero(d_fused.rows(), d_fused.cols());
    for (Eigen::Index r = 0; r < d_fused.rows(); ++r) {
      if (norms(r) <= kNormFloor) continue;
      const double proj = unit.row(r).dot(d_fused.row(r));
      dx.row(r) = (d_fused.row(r) - proj * unit.row(r)) / norms(r);
    }
    return dx;
  };
  return {through_norm(cache.image_unit, cache.image_norm),
          through_norm(cache.text_unit, cache.text_norm)};
}

}  // namespace cliptime
