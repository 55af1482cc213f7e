#pragma once

// Compact trainable image and text encoders, and the fusion of their
// embeddings into the single token consumed by both prediction heads.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cliptime/image.hpp"
#include "cliptime/nn.hpp"

namespace cliptime {

enum class VisionArch { kCompactConv, kPatchMlp };

std::string_view vision_arch_name(VisionArch arch) noexcept;
VisionArch vision_arch_from_name(std::string_view name);

struct EncoderConfig {
  int d = 512;
  int vocab_size = 256;  // rows of the token table; >= vocabulary size
  int max_tokens = 16;
  VisionArch vision_arch = VisionArch::kCompactConv;
  bool normalize_embeddings = true;

  void validate() const;
};

using TokenIds = std::vector<int>;

/// Closed-world vocabulary. Id 0 is padding, id 1 is the unknown token.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnknownToken = "<unk>";

  /// Reserved tokens followed by the sorted distinct words of `corpus`.
  static Vocabulary build(std::span<const std::string> corpus);
  /// The vocabulary of every text the dataset generator can emit.
  static Vocabulary standard();

  explicit Vocabulary(std::vector<std::string> tokens);
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  int id(std::string_view word) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// UTF-8, one token per line; line k (0-based) holds id k.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> split_words(std::string_view text);

/// Maps text to exactly cfg.max_tokens ids (truncated or padded).
TokenIds tokenize(std::string_view text, const Vocabulary& vocab,
                  const EncoderConfig& cfg);

/// Converts a raster into the encoder input layout: (H*W) x 3, values
/// 1 - pixel/255 so that dark structure maps to large activations.
Matrix image_to_input(const Image& image);

struct ImageEncoderCache {
  struct PerSample {
    std::vector<Matrix> columns;         // im2col per conv layer
    std::vector<Matrix> pre_activation;  // conv outputs before ReLU
  };
  std::vector<PerSample> samples;
  Matrix pooled;  // B x channels
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& cfg, int image_size);

  void init(Rng& rng);
  /// Batch of preprocessed inputs -> B x d embeddings.
  Matrix forward(std::span<const Matrix> inputs, ImageEncoderCache* cache = nullptr) const;
  Matrix encode(const Image& image) const;
  void backward(const ImageEncoderCache& cache, const Matrix& d_embedding);
  void collect(ParameterList& out);

  int image_size() const { return image_size_; }

 private:
  int image_size_ = 0;
  std::vector<Conv2d> convs_;
  Linear projection_;
};

struct TextEncoderCache {
  std::vector<TokenIds> tokens;
  std::vector<int> counts;  // non-padding tokens per sample
  Matrix pooled;
  Matrix hidden_pre;
  Matrix hidden;
};

/// Learned token embeddings, mean-pooled over non-padding tokens, then a
/// two-layer ReLU MLP.
class TextEncoder {
 public:
  TextEncoder() = default;
  explicit TextEncoder(const EncoderConfig& cfg);

  void init(Rng& rng);
  Matrix forward(std::span<const TokenIds> batch, TextEncoderCache* cache = nullptr) const;
  RowVector encode(const TokenIds& tokens) const;
  void backward(const TextEncoderCache& cache, const Matrix& d_embedding);
  void collect(ParameterList& out);

 private:
  Parameter embedding_;
  Linear fc1_;
  Linear fc2_;
};

struct FuseCache {
  Matrix image_unit;
  Matrix text_unit;
  Vector image_norm;
  Vector text_norm;
  bool normalized = false;
};

/// Element-wise sum of two B x d embedding batches, each optionally
/// L2-normalized per row first.
Matrix fuse(const Matrix& image, const Matrix& text, bool normalize,
            FuseCache* cache = nullptr);
RowVector fuse(const RowVector& image, const RowVector& text, bool normalize);

/// Gradients w.r.t. both inputs given dL/dfused.
std::pair<Matrix, Matrix> fuse_backward(const FuseCache& cache, const Matrix& d_fused);

}  // namespace cliptime
