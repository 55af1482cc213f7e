#include "cliptime/nn.hpp"

#include <cmath>

namespace cliptime {

void xavier_uniform(Matrix& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = rng.uniform(-limit, limit);
  }
}

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", out_features, in_features),
      bias(name + ".bias", 1, out_features) {}

void Linear::init(Rng& rng) {
  xavier_uniform(weight.value, in_features(), out_features(), rng);
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.cols()) {
    throw ShapeError(weight.name + ": expected " +
                     std::to_string(weight.value.cols()) + " input features, got " +
                     std::to_string(x.cols()));
  }
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gain(name + ".gain", 1, dim), shift(name + ".shift", 1, dim) {
  init();
}

void LayerNorm::init() {
  gain.value.setOnes();
  shift.value.setZero();
}

Matrix LayerNorm::forward(const Matrix& x, LayerNormCache* cache) const {
  if (x.cols() != gain.value.cols()) {
    throw ShapeError(gain.name + ": feature dimension mismatch");
  }
  const Eigen::Index n = x.cols();
  Matrix normalized(x.rows(), n);
  Vector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(n);
    inv_std(r) = 1.0 / std::sqrt(var + kEps);
    normalized.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += shift.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const LayerNormCache& cache, const Matrix& dy) {
  const Matrix& xhat = cache.normalized;
  gain.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  shift.grad.row(0) += dy.colwise().sum();
  const double n = static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum_d = dxhat.row(r).sum();
    const double sum_dx = dxhat.row(r).dot(xhat.row(r));
    dx.row(r) = (cache.inv_std(r) / n) *
                (n * dxhat.row(r).array() - sum_d - xhat.row(r).array() * sum_dx);
  }
  return dx;
}

Conv2d::Conv2d(const std::string& name, const Geometry& g)
    : weight(name + ".weight", g.out_channels, g.kernel * g.kernel * g.in_channels),
      bias(name + ".bias", 1, g.out_channels),
      geom_(g) {}

void Conv2d::init(Rng& rng) {
  const int fan_in = geom_.kernel * geom_.kernel * geom_.in_channels;
  const int fan_out = geom_.kernel * geom_.kernel * geom_.out_channels;
  xavier_uniform(weight.value, fan_in, fan_out, rng);
  bias.value.setZero();
}

Matrix Conv2d::im2col(const Matrix& input) const {
  const auto& g = geom_;
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int k = g.kernel;
  const int c = g.in_channels;
  Matrix cols = Matrix::Zero(Eigen::Index(oh) * ow, Eigen::Index(k) * k * c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* dst = cols.row(Eigen::Index(oy) * ow + ox).data();
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * g.stride + ky - g.padding;
        if (iy < 0 || iy >= g.in_height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * g.stride + kx - g.padding;
          if (ix < 0 || ix >= g.in_width) continue;
          const double* src = input.row(Eigen::Index(iy) * g.in_width + ix).data();
          std::copy(src, src + c, dst + (ky * k + kx) * c);
        }
      }
    }
  }
  return cols;
}

Matrix Conv2d::col2im(const Matrix& columns) const {
  const auto& g = geom_;
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int k = g.kernel;
  const int c = g.in_channels;
  Matrix input = Matrix::Zero(Eigen::Index(g.in_height) * g.in_width, c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* src = columns.row(Eigen::Index(oy) * ow + ox).data();
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * g.stride + ky - g.padding;
        if (iy < 0 || iy >= g.in_height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * g.stride + kx - g.padding;
          if (ix < 0 || ix >= g.in_width) continue;
          double* dst = input.row(Eigen::Index(iy) * g.in_width + ix).data();
          const double* s = src + (ky * k + kx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += s[ch];
        }
      }
    }
  }
  return input;
}

Matrix Conv2d::forward(const Matrix& input, Matrix* columns) const {
  if (input.rows() != Eigen::Index(geom_.in_height) * geom_.in_width ||
      input.cols() != geom_.in_channels) {
    throw ShapeError(weight.name + ": input is " + std::to_string(input.rows()) +
                     "x" + std::to_string(input.cols()) + ", expected " +
                     std::to_string(geom_.in_height * geom_.in_width) + "x" +
                     std::to_string(geom_.in_channels));
  }
  Matrix cols = im2col(input);
  Matrix out = cols * weight.value.transpose();
  out.rowwise() += bias.value.row(0);
  if (columns) *columns = std::move(cols);
  return out;
}

Matrix Conv2d::backward(const Matrix& columns, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * columns;
  bias.grad.row(0) += dy.colwise().sum();
  return col2im(dy * weight.value);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  }
  return mask;
}

}  // namespace cliptime
