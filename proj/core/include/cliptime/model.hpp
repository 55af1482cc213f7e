#pragma once

#include <span>
#include <string_view>

#include "cliptime/encoders.hpp"
#include "cliptime/heads.hpp"

namespace cliptime {

/// Per-batch outputs of both heads.
struct HeadOutputs {
  Matrix logits;  // B x n_classes, pre-softmax
  Vector t_hat;   // B, each in (0, 1)
};

struct ForwardCache {
  ImageEncoderCache image;
  TextEncoderCache text;
  FuseCache fusion;
  Matrix fused;
  TimeTransformerCache time;
};

/// Image encoder + text encoder -> fused token -> classifier and
/// Time-Transformer.
class CLIPTimeModel {
 public:
  CLIPTimeModel(const EncoderConfig& encoder, const ModelConfig& model, int image_size,
                Vocabulary vocabulary);

  /// Xavier-uniform affine maps, unit LayerNorm gains, zero biases.
  void init(std::uint64_t seed);

  HeadOutputs forward(std::span<const Matrix> images, std::span<const TokenIds> tokens,
                      ForwardCache* cache = nullptr, Rng* dropout_rng = nullptr) const;
  /// Accumulates parameter gradients for the given output gradients.
  void backward(const ForwardCache& cache, const Matrix& d_logits, const Vector& d_t_hat);

  /// Heads only, on precomputed fused embeddings.
  HeadOutputs forward_heads(const Matrix& fused) const;

  ParameterList parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  TokenIds tokenize(std::string_view text) const;

  const EncoderConfig& encoder_config() const { return encoder_cfg_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  int image_size() const { return image_size_; }

  ImageEncoder& image_encoder() { return image_encoder_; }
  TextEncoder& text_encoder() { return text_encoder_; }
  ClassifierHead& classifier() { return classifier_; }
  TimeTransformer& time_head() { return time_head_; }
  const ImageEncoder& image_encoder() const { return image_encoder_; }
  const TextEncoder& text_encoder() const { return text_encoder_; }
  const TimeTransformer& time_head() const { return time_head_; }

 private:
  EncoderConfig encoder_cfg_;
  ModelConfig model_cfg_;
  int image_size_;
  Vocabulary vocab_;
  ImageEncoder image_encoder_;
  TextEncoder text_encoder_;
  ClassifierHead classifier_;
  TimeTransformer time_head_;
};

}  // namespace cliptime
