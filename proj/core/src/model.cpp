#include "cliptime/model.hpp"

namespace cliptime {

CLIPTimeModel::CLIPTimeModel(const EncoderConfig& encoder, const ModelConfig& model,
                             int image_size, Vocabulary vocabulary)
    : encoder_cfg_(encoder),
      model_cfg_(model),
      image_size_(image_size),
      vocab_(std::move(vocabulary)) {
  encoder_cfg_.validate();
  model_cfg_.validate();
  if (encoder_cfg_.d != model_cfg_.d) {
    throw ConfigError("encoder.d and model.d must be equal");
  }
  if (vocab_.size() > encoder_cfg_.vocab_size) {
    throw ConfigError("encoder.vocab_size (" + std::to_string(encoder_cfg_.vocab_size) +
                      ") is smaller than the vocabulary (" +
                      std::to_string(vocab_.size()) + " tokens)");
  }
  image_encoder_ = ImageEncoder(encoder_cfg_, image_size_);
  text_encoder_ = TextEncoder(encoder_cfg_);
  classifier_ = ClassifierHead(model_cfg_);
  time_head_ = TimeTransformer(model_cfg_);
}

void CLIPTimeModel::init(std::uint64_t seed) {
  Rng image_rng(derive_seed(seed, 11));
  Rng text_rng(derive_seed(seed, 12));
  Rng class_rng(derive_seed(seed, 13));
  Rng time_rng(derive_seed(seed, 14));
  image_encoder_.init(image_rng);
  text_encoder_.init(text_rng);
  classifier_.init(class_rng);
  time_head_.init(time_rng);
  zero_grad();
}

HeadOutputs CLIPTimeModel::forward_heads(const Matrix& fused) const {
  return HeadOutputs{classifier_.forward(fused), time_head_.forward(fused)};
}

HeadOutputs CLIPTimeModel::forward(std::span<const Matrix> images,
                                   std::span<const TokenIds> tokens, ForwardCache* cache,
                                   Rng* dropout_rng) const {
  if (images.size() != tokens.size()) {
    throw ShapeError("image and text batch sizes differ");
  }
  const Matrix img = image_encoder_.forward(images, cache ? &cache->image : nullptr);
  const Matrix txt = text_encoder_.forward(tokens, cache ? &cache->text : nullptr);
  Matrix fused = fuse(img, txt, encoder_cfg_.normalize_embeddings,
                      cache ? &cache->fusion : nullptr);
  HeadOutputs out;
  out.logits = classifier_.forward(fused);
  out.t_hat = time_head_.forward(fused, cache ? &cache->time : nullptr, dropout_rng);
  if (cache) cache->fused = std::move(fused);
  return out;
}

void CLIPTimeModel::backward(const ForwardCache& cache, const Matrix& d_logits,
                             const Vector& d_t_hat) {
  Matrix d_fused = classifier_.backward(cache.fused, d_logits);
  d_fused += time_head_.backward(cache.time, d_t_hat);
  const auto [d_img, d_txt] = fuse_backward(cache.fusion, d_fused);
  image_encoder_.backward(cache.image, d_img);
  text_encoder_.backward(cache.text, d_txt);
}

ParameterList CLIPTimeModel::parameters() {
  ParameterList out;
  image_encoder_.collect(out);
  text_encoder_.collect(out);
  classifier_.collect(out);
  time_head_.collect(out);
  return out;
}

std::vector<const Parameter*> CLIPTimeModel::parameters() const {
  const auto list = const_cast<CLIPTimeModel*>(this)->parameters();
  return {list.begin(), list.end()};
}

void CLIPTimeModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

TokenIds CLIPTimeModel::tokenize(std::string_view text) const {
  return cliptime::tokenize(text, vocab_, encoder_cfg_);
}

}  // namespace cliptime
