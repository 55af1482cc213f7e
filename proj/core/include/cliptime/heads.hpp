#pragma once

// Prediction heads on the fused embedding: a single affine classifier and
// the Time-Transformer regressor (post-norm encoder layers over a length-1
// token sequence, first-token pooling, affine map, sigmoid).

#include <vector>

#include "cliptime/nn.hpp"

namespace cliptime {

struct ModelConfig {
  int d = 512;
  int n_encoder_layers = 2;
  int ffn_hidden = 2048;
  int n_attention_heads = 8;
  int n_classes = 3;
  double dropout = 0.0;

  void validate() const;
};

/// B x L x d activations stored as a (B*L) x d matrix, sample-major.
struct SequenceBatch {
  int batch = 0;
  int length = 0;
  Matrix tokens;

  int dim() const { return static_cast<int>(tokens.cols()); }
};

/// B x d -> B x 1 x d. No positional encoding is added.
SequenceBatch reshape_to_sequence(const Matrix& batch);
/// Inverse of reshape_to_sequence for length-1 sequences.
Matrix flatten_sequence(const SequenceBatch& seq);
/// Average pooling over a length-1 sequence: selects token 0 of each sample.
Matrix pool_first_token(const SequenceBatch& seq);

class ClassifierHead {
 public:
  ClassifierHead() = default;
  explicit ClassifierHead(const ModelConfig& cfg);

  void init(Rng& rng) { fc_.init(rng); }
  Matrix forward(const Matrix& fused) const { return fc_.forward(fused); }
  Matrix backward(const Matrix& fused, const Matrix& d_logits) {
    return fc_.backward(fused, d_logits);
  }
  void collect(ParameterList& out) { fc_.collect(out); }

  Linear& layer() { return fc_; }

 private:
  Linear fc_;
};

struct AttentionCache {
  Matrix input;
  Matrix query;
  Matrix key;
  Matrix value;
  Matrix context;
  /// weights[b * heads + h] is the L x L softmax matrix of sample b, head h.
  std::vector<Matrix> weights;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, int d, int heads);

  void init(Rng& rng);
  Matrix forward(const SequenceBatch& x, AttentionCache* cache = nullptr) const;
  /// Returns dL/dx.
  Matrix backward(const AttentionCache& cache, const Matrix& dy, int seq_len);
  void collect(ParameterList& out);

  int heads() const { return heads_; }

 private:
  int heads_ = 1;
  Linear q_;
  Linear k_;
  Linear v_;
  Linear out_;
};

struct EncoderLayerCache {
  AttentionCache attention;
  Matrix attention_mask;  // dropout mask, empty when inactive
  LayerNormCache norm1;
  Matrix z1;
  Matrix ffn_pre;
  Matrix ffn_hidden;
  Matrix ffn_mask;
  LayerNormCache norm2;
};

/// Z1 = LayerNorm(X + MHSA(X)); out = LayerNorm(Z1 + FFN(Z1)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, const ModelConfig& cfg);

  void init(Rng& rng);
  /// `dropout_rng` enables dropout (training mode) when non-null.
  SequenceBatch forward(const SequenceBatch& x, EncoderLayerCache* cache = nullptr,
                        Rng* dropout_rng = nullptr) const;
  Matrix backward(const EncoderLayerCache& cache, const Matrix& dy, int seq_len);
  void collect(ParameterList& out);

  const MultiHeadSelfAttention& attention() const { return attention_; }

 private:
  double dropout_ = 0.0;
  MultiHeadSelfAttention attention_;
  LayerNorm norm1_;
  Linear ffn1_;
  Linear ffn2_;
  LayerNorm norm2_;
};

struct TimeTransformerCache {
  std::vector<EncoderLayerCache> layers;
  Matrix pooled;
  Vector t_hat;
};

class TimeTransformer {
 public:
  TimeTransformer() = default;
  explicit TimeTransformer(const ModelConfig& cfg);

  void init(Rng& rng);
  /// B x d fused embeddings -> B normalized times in (0, 1).
  Vector forward(const Matrix& fused, TimeTransformerCache* cache = nullptr,
                 Rng* dropout_rng = nullptr) const;
  /// Returns dL/dfused given dL/dt_hat.
  Matrix backward(const TimeTransformerCache& cache, const Vector& d_t_hat);
  void collect(ParameterList& out);

  const std::vector<EncoderLayer>& layers() const { return layers_; }
  Linear& regressor() { return regressor_; }

 private:
  std::vector<EncoderLayer> layers_;
  Linear regressor_;  // w_t (1 x d), b_t
};

}  // namespace cliptime
