#pragma once

// Differentiable building blocks. Every layer has a const forward that is
// safe to call concurrently, plus a backward that accumulates parameter
// gradients and needs exclusive access. Rows of an activation matrix are
// tokens (or samples); columns are features.

#include <string>
#include <vector>

#include "cliptime/common.hpp"

namespace cliptime {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParameterList = std::vector<Parameter*>;

void xavier_uniform(Matrix& w, int fan_in, int fan_out, Rng& rng);

/// Affine map y = x W^T + b, W is (out x in).
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  void init(Rng& rng);
  Matrix forward(const Matrix& x) const;
  /// Returns dL/dx given the forward input and dL/dy.
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Parameter weight;
  Parameter bias;
};

struct LayerNormCache {
  Matrix normalized;
  Vector inv_std;
};

/// Per-row layer normalization with learned gain and shift.
class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  void init();
  Matrix forward(const Matrix& x, LayerNormCache* cache = nullptr) const;
  Matrix backward(const LayerNormCache& cache, const Matrix& dy);
  void collect(ParameterList& out) { out.push_back(&gain); out.push_back(&shift); }

  Parameter gain;
  Parameter shift;
};

/// Square-kernel 2-D convolution over one HWC sample stored as
/// (height*width) x channels, lowered to a GEMM via im2col.
class Conv2d {
 public:
  struct Geometry {
    int in_height = 0;
    int in_width = 0;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 0;

    int out_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
    int out_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  };

  Conv2d() = default;
  Conv2d(const std::string& name, const Geometry& geometry);

  void init(Rng& rng);
  /// `columns`, when given, receives the im2col matrix needed by backward.
  Matrix forward(const Matrix& input, Matrix* columns = nullptr) const;
  Matrix backward(const Matrix& columns, const Matrix& dy);
  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }

  const Geometry& geometry() const { return geom_; }

  Parameter weight;  // out_channels x (kernel*kernel*in_channels)
  Parameter bias;

 private:
  Matrix im2col(const Matrix& input) const;
  Matrix col2im(const Matrix& columns) const;

  Geometry geom_;
};

Matrix relu(const Matrix& x);
/// Gradient through ReLU given its forward input.
Matrix relu_backward(const Matrix& pre_activation, const Matrix& dy);

/// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix& logits);

double sigmoid(double x);

/// Inverted dropout mask with entries 0 or 1/(1-rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

}  // namespace cliptime
