#include "cliptime/heads.hpp"

#include <algorithm>
#include <cmath>

namespace cliptime {

void ModelConfig::validate() const {
  if (d <= 0) throw ConfigError("model.d must be positive");
  if (n_encoder_layers <= 0) throw ConfigError("model.n_encoder_layers must be positive");
  if (ffn_hidden <= 0) throw ConfigError("model.ffn_hidden must be positive");
  if (n_attention_heads <= 0 || d % n_attention_heads != 0) {
    throw ConfigError("model.n_attention_heads must divide model.d");
  }
  if (n_classes != 3) throw ConfigError("model.n_classes must be 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("model.dropout must lie in [0, 1)");
  }
}

SequenceBatch reshape_to_sequence(const Matrix& batch) {
  return SequenceBatch{static_cast<int>(batch.rows()), 1, batch};
}

Matrix flatten_sequence(const SequenceBatch& seq) {
  if (seq.length != 1) throw ShapeError("only length-1 sequences flatten to B x d");
  return seq.tokens;
}

Matrix pool_first_token(const SequenceBatch& seq) {
  Matrix pooled(seq.batch, seq.dim());
  for (int b = 0; b < seq.batch; ++b) {
    pooled.row(b) = seq.tokens.row(Eigen::Index(b) * seq.length);
  }
  return pooled;
}

ClassifierHead::ClassifierHead(const ModelConfig& cfg)
    : fc_("classifier", cfg.d, cfg.n_classes) {}

// ------------------------------------------------------------------- MHSA

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, int d, int heads)
    : heads_(heads),
      q_(name + ".query", d, d),
      k_(name + ".key", d, d),
      v_(name + ".value", d, d),
      out_(name + ".out", d, d) {}

void MultiHeadSelfAttention::init(Rng& rng) {
  q_.init(rng);
  k_.init(rng);
  v_.init(rng);
  out_.init(rng);
}

Matrix MultiHeadSelfAttention::forward(const SequenceBatch& x, AttentionCache* cache) const {
  const int d = x.dim();
  if (d != q_.in_features()) throw ShapeError("attention: feature dimension mismatch");
  const int L = x.length;
  const int dh = d / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix q = q_.forward(x.tokens);
  Matrix k = k_.forward(x.tokens);
  Matrix v = v_.forward(x.tokens);
  Matrix context(x.tokens.rows(), d);
  std::vector<Matrix> weights;
  if (cache) weights.reserve(std::size_t(x.batch) * heads_);

  for (int b = 0; b < x.batch; ++b) {
    const Eigen::Index r0 = Eigen::Index(b) * L;
    for (int h = 0; h < heads_; ++h) {
      const Eigen::Index c0 = Eigen::Index(h) * dh;
      const Matrix scores =
          scale * q.block(r0, c0, L, dh) * k.block(r0, c0, L, dh).transpose();
      Matrix a = softmax_rows(scores);
      context.block(r0, c0, L, dh) = a * v.block(r0, c0, L, dh);
      if (cache) weights.push_back(std::move(a));
    }
  }
  Matrix y = out_.forward(context);
  if (cache) {
    cache->input = x.tokens;
    cache->query = std::move(q);
    cache->key = std::move(k);
    cache->value = std::move(v);
    cache->context = std::move(context);
    cache->weights = std::move(weights);
  }
  return y;
}

Matrix MultiHeadSelfAttention::backward(const AttentionCache& cache, const Matrix& dy,
                                        int L) {
  const Eigen::Index d = cache.input.cols();
  const int dh = static_cast<int>(d) / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int batch = static_cast<int>(cache.input.rows()) / L;

  const Matrix d_context = out_.backward(cache.context, dy);
  Matrix dq(cache.query.rows(), d);
  Matrix dk(cache.key.rows(), d);
  Matrix dv(cache.value.rows(), d);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = Eigen::Index(b) * L;
    for (int h = 0; h < heads_; ++h) {
      const Eigen::Index c0 = Eigen::Index(h) * dh;
      const Matrix& a = cache.weights[std::size_t(b) * heads_ + h];
      const auto dctx = d_context.block(r0, c0, L, dh);
      dv.block(r0, c0, L, dh) = a.transpose() * dctx;
      const Matrix da = dctx * cache.value.block(r0, c0, L, dh).transpose();
      // Softmax Jacobian, row by row.
      Matrix ds(L, L);
      for (int i = 0; i < L; ++i) {
        const double dot = da.row(i).dot(a.row(i));
        ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
      }
      dq.block(r0, c0, L, dh) = scale * ds * cache.key.block(r0, c0, L, dh);
      dk.block(r0, c0, L, dh) = scale * ds.transpose() * cache.query.block(r0, c0, L, dh);
    }
  }
  Matrix dx = q_.backward(cache.input, dq);
  dx += k_.backward(cache.input, dk);
  dx += v_.backward(cache.input, dv);
  return dx;
}

void MultiHeadSelfAttention::collect(ParameterList& out) {
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  out_.collect(out);
}

// ---------------------------------------------------------- encoder layer

EncoderLayer::EncoderLayer(const std::string& name, const ModelConfig& cfg)
    : dropout_(cfg.dropout),
      attention_(name + ".attention", cfg.d, cfg.n_attention_heads),
      norm1_(name + ".norm1", cfg.d),
      ffn1_(name + ".ffn1", cfg.d, cfg.ffn_hidden),
      ffn2_(name + ".ffn2", cfg.ffn_hidden, cfg.d),
      norm2_(name + ".norm2", cfg.d) {}

void EncoderLayer::init(Rng& rng) {
  attention_.init(rng);
  norm1_.init();
  ffn1_.init(rng);
  ffn2_.init(rng);
  norm2_.init();
}

SequenceBatch EncoderLayer::forward(const SequenceBatch& x, EncoderLayerCache* cache,
                                    Rng* dropout_rng) const {
  const bool drop = dropout_rng != nullptr && dropout_ > 0.0;
  AttentionCache* attn_cache = cache ? &cache->attention : nullptr;
  Matrix attended = attention_.forward(x, attn_cache);
  Matrix attn_mask;
  if (drop) {
    attn_mask = dropout_mask(attended.rows(), attended.cols(), dropout_, *dropout_rng);
    attended.array() *= attn_mask.array();
  }
  LayerNormCache n1;
  Matrix z1 = norm1_.forward(x.tokens + attended, cache ? &n1 : nullptr);

  Matrix ffn_pre = ffn1_.forward(z1);
  Matrix hidden = relu(ffn_pre);
  Matrix ffn_out = ffn2_.forward(hidden);
  Matrix ffn_mask;
  if (drop) {
    ffn_mask = dropout_mask(ffn_out.rows(), ffn_out.cols(), dropout_, *dropout_rng);
    ffn_out.array() *= ffn_mask.array();
  }
  LayerNormCache n2;
  Matrix out = norm2_.forward(z1 + ffn_out, cache ? &n2 : nullptr);
  if (cache) {
    cache->attention_mask = std::move(attn_mask);
    cache->norm1 = std::move(n1);
    cache->z1 = std::move(z1);
    cache->ffn_pre = std::move(ffn_pre);
    cache->ffn_hidden = std::move(hidden);
    cache->ffn_mask = std::move(ffn_mask);
    cache->norm2 = std::move(n2);
  }
  return SequenceBatch{x.batch, x.length, std::move(out)};
}

Matrix EncoderLayer::backward(const EncoderLayerCache& cache, const Matrix& dy, int L) {
  const Matrix d_sum2 = norm2_.backward(cache.norm2, dy);
  Matrix d_ffn_out = d_sum2;
  if (cache.ffn_mask.size() > 0) d_ffn_out.array() *= cache.ffn_mask.array();
  const Matrix d_hidden = ffn2_.backward(cache.ffn_hidden, d_ffn_out);
  Matrix d_z1 = d_sum2 + ffn1_.backward(cache.z1, relu_backward(cache.ffn_pre, d_hidden));

  const Matrix d_sum1 = norm1_.backward(cache.norm1, d_z1);
  Matrix d_attended = d_sum1;
  if (cache.attention_mask.size() > 0) d_attended.array() *= cache.attention_mask.array();
  return d_sum1 + attention_.backward(cache.attention, d_attended, L);
}

void EncoderLayer::collect(ParameterList& out) {
  attention_.collect(out);
  norm1_.collect(out);
  ffn1_.collect(out);
  ffn2_.collect(out);
  norm2_.collect(out);
}

// -------------------------------------------------------- time transformer

TimeTransformer::TimeTransformer(const ModelConfig& cfg)
    : regressor_("time.regressor", cfg.d, 1) {
  for (int i = 0; i < cfg.n_encoder_layers; ++i) {
    layers_.emplace_back("time.layer" + std::to_string(i), cfg);
  }
}

void TimeTransformer::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
  regressor_.init(rng);
}

Vector TimeTransformer::forward(const Matrix& fused, TimeTransformerCache* cache,
                                Rng* dropout_rng) const {
  SequenceBatch seq = reshape_to_sequence(fused);
  if (cache) cache->layers.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    seq = layers_[i].forward(seq, cache ? &cache->layers[i] : nullptr, dropout_rng);
  }
  Matrix pooled = pool_first_token(seq);
  const Matrix z = regressor_.forward(pooled);
  Vector t_hat(z.rows());
  // Clamped one ulp inside the unit interval so the range stays open even
  // where the logistic function rounds to 0 or 1.
  constexpr double kLo = 0x1.0p-53;
  constexpr double kHi = 1.0 - 0x1.0p-53;
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    t_hat(b) = std::clamp(sigmoid(z(b, 0)), kLo, kHi);
  }
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->t_hat = t_hat;
  }
  return t_hat;
}

Matrix TimeTransformer::backward(const TimeTransformerCache& cache, const Vector& d_t_hat) {
  Matrix dz(d_t_hat.size(), 1);
  for (Eigen::Index b = 0; b < d_t_hat.size(); ++b) {
    const double s = cache.t_hat(b);
    dz(b, 0) = d_t_hat(b) * s * (1.0 - s);
  }
  Matrix d = regressor_.backward(cache.pooled, dz);
  for (std::size_t i = layers_.size(); i-- > 0;) {
    d = layers_[i].backward(cache.layers[i], d, 1);
  }
  return d;
}

void TimeTransformer::collect(ParameterList& out) {
  for (auto& l : layers_) l.collect(out);
  regressor_.collect(out);
}

}  // namespace cliptime
