#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "falcon/error.hpp"

namespace falcon::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C x H x W activations stored as a C x (H*W) row-major matrix.
template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> data;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(Eigen::Index channels, int h, int w) : data(Mat<Scalar>::Zero(channels, Eigen::Index(h) * w)), height(h), width(w) {}
  FeatureMap(Mat<Scalar> d, int h, int w) : data(std::move(d)), height(h), width(w) {
    if (data.cols() != Eigen::Index(h) * w) throw Error(ErrorKind::ShapeMismatch, "feature map size mismatch");
  }

  Eigen::Index channels() const { return data.rows(); }
  bool empty() const { return data.size() == 0; }
  bool same_shape(const FeatureMap& o) const {
    return channels() == o.channels() && height == o.height && width == o.width;
  }

  template <typename To>
  FeatureMap<To> cast() const { return FeatureMap<To>(data.template cast<To>(), height, width); }

  friend bool operator==(const FeatureMap& a, const FeatureMap& b) {
    return a.same_shape(b) && a.data == b.data;
  }
};

/// Named pointer to a learnable (or persistent buffer) tensor inside a model.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Mat<Scalar>* value;
};

template <typename Scalar>
struct Conv2d {
  Mat<Scalar> weight;  // out x (in * k * k)
  Mat<Scalar> bias;    // out x 1
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int s)
      : weight(Mat<Scalar>::Zero(out, Eigen::Index(in) * k * k)),
        bias(Mat<Scalar>::Zero(out, 1)),
        in_channels(in),
        out_channels(out),
        kernel(k),
        stride(s) {}

  int pad() const { return kernel / 2; }
  int out_size(int n) const { return (n + 2 * pad() - kernel) / stride + 1; }
  long long param_count() const { return weight.size() + bias.size(); }
  long long macs(int in_h, int in_w) const {
    return (long long)out_size(in_h) * out_size(in_w) * weight.size();
  }

  void append_params(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }

  /// He-uniform weights, zero bias.
  template <typename Rng>
  void init(Rng& rng) {
    const double bound = std::sqrt(6.0 / double(weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = Scalar(u(rng));
    bias.setZero();
  }
};

template <typename Scalar>
struct Linear {
  Mat<Scalar> weight;  // out x in
  Mat<Scalar> bias;    // out x 1

  Linear() = default;
  Linear(int in, int out) : weight(Mat<Scalar>::Zero(out, in)), bias(Mat<Scalar>::Zero(out, 1)) {}

  long long param_count() const { return weight.size() + bias.size(); }
  void append_params(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
  template <typename Rng>
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = Scalar(u(rng));
    bias.setZero();
  }
};

template <typename Scalar>
struct BatchNorm {
  Mat<Scalar> gamma;         // C x 1
  Mat<Scalar> beta;          // C x 1
  Mat<Scalar> running_mean;  // buffers, not trained
  Mat<Scalar> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(int c)
      : gamma(Mat<Scalar>::Ones(c, 1)),
        beta(Mat<Scalar>::Zero(c, 1)),
        running_mean(Mat<Scalar>::Zero(c, 1)),
        running_var(Mat<Scalar>::Ones(c, 1)) {}

  long long param_count() const { return gamma.size() + beta.size(); }
  void append_params(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
  void append_buffers(const std::string& prefix, std::vector<ParamRef<Scalar>>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }
};

// ---------------------------------------------------------------------------
// Convolution via im2col.

template <typename Scalar>
Mat<Scalar> im2col(const FeatureMap<Scalar>& in, int kernel, int stride, int pad) {
  const int h = in.height, w = in.width;
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  Mat<Scalar> col(in.channels() * kernel * kernel, Eigen::Index(ho) * wo);
  for (Eigen::Index ci = 0; ci < in.channels(); ++ci) {
    const Scalar* src = in.data.row(ci).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        Scalar* dst = col.row((ci * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          Scalar* drow = dst + Eigen::Index(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + wo, Scalar(0));
            continue;
          }
          const Scalar* srow = src + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            drow[ox] = (ix < 0 || ix >= w) ? Scalar(0) : srow[ix];
          }
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
FeatureMap<Scalar> col2im(const Mat<Scalar>& col, Eigen::Index channels, int h, int w, int kernel, int stride,
                          int pad) {
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  FeatureMap<Scalar> out(channels, h, w);
  for (Eigen::Index ci = 0; ci < channels; ++ci) {
    Scalar* dst = out.data.row(ci).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Scalar* src = col.row((ci * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const Scalar* srow = src + Eigen::Index(oy) * wo;
          Scalar* drow = dst + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
  return out;
}

/// Saved state for the backward pass of one convolution.
template <typename Scalar>
struct ConvCache {
  Mat<Scalar> col;
  int in_height = 0;
  int in_width = 0;
};

template <typename Scalar>
FeatureMap<Scalar> conv_forward(const Conv2d<Scalar>& conv, const FeatureMap<Scalar>& in, ConvCache<Scalar>* cache) {
  if (in.channels() != conv.in_channels)
    throw Error(ErrorKind::ShapeMismatch, "conv input has " + std::to_string(in.channels()) + " channels, expected " +
                                              std::to_string(conv.in_channels));
  Mat<Scalar> col = im2col(in, conv.kernel, conv.stride, conv.pad());
  FeatureMap<Scalar> out;
  out.height = conv.out_size(in.height);
  out.width = conv.out_size(in.width);
  out.data.noalias() = conv.weight * col;
  out.data.colwise() += conv.bias.col(0);
  if (cache) {
    cache->col = std::move(col);
    cache->in_height = in.height;
    cache->in_width = in.width;
  }
  return out;
}

/// Accumulates parameter gradients into `grad` and returns d(input) unless `need_input_grad` is false.
template <typename Scalar>
FeatureMap<Scalar> conv_backward(const Conv2d<Scalar>& conv, const ConvCache<Scalar>& cache,
                                 const FeatureMap<Scalar>& d_out, Conv2d<Scalar>& grad, bool need_input_grad = true) {
  grad.weight.noalias() += d_out.data * cache.col.transpose();
  grad.bias.col(0) += d_out.data.rowwise().sum();
  if (!need_input_grad) return {};
  Mat<Scalar> d_col = conv.weight.transpose() * d_out.data;
  return col2im(d_col, conv.in_channels, cache.in_height, cache.in_width, conv.kernel, conv.stride, conv.pad());
}

// ---------------------------------------------------------------------------
// Pointwise and structural ops.

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.data = x.data.cwiseMax(Scalar(0));
}

/// `out` is the post-activation value.
template <typename Scalar>
void relu_backward_inplace(const FeatureMap<Scalar>& out, FeatureMap<Scalar>& d) {
  d.data = (out.data.array() > Scalar(0)).select(d.data, Scalar(0));
}

template <typename Scalar>
void leaky_relu_inplace(Mat<Scalar>& x, Scalar slope) {
  x = (x.array() > Scalar(0)).select(x, x * slope);
}

/// `pre` is the pre-activation value.
template <typename Scalar>
void leaky_relu_backward_inplace(const Mat<Scalar>& pre, Mat<Scalar>& d, Scalar slope) {
  d = (pre.array() > Scalar(0)).select(d, d * slope);
}

template <typename Scalar>
Mat<Scalar> sigmoid(const Mat<Scalar>& z) {
  return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
}

template <typename Scalar>
FeatureMap<Scalar> upsample2x(const FeatureMap<Scalar>& in) {
  const int h = in.height, w = in.width;
  FeatureMap<Scalar> out(in.channels(), 2 * h, 2 * w);
  for (Eigen::Index c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    Scalar* dst = out.data.row(c).data();
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) dst[Eigen::Index(y) * 2 * w + x] = src[Eigen::Index(y / 2) * w + x / 2];
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upsample2x_backward(const FeatureMap<Scalar>& d_out) {
  const int h = d_out.height / 2, w = d_out.width / 2;
  FeatureMap<Scalar> d_in(d_out.channels(), h, w);
  for (Eigen::Index c = 0; c < d_out.channels(); ++c) {
    const Scalar* src = d_out.data.row(c).data();
    Scalar* dst = d_in.data.row(c).data();
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) dst[Eigen::Index(y / 2) * w + x / 2] += src[Eigen::Index(y) * 2 * w + x];
  }
  return d_in;
}

template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.height != b.height || a.width != b.width)
    throw Error(ErrorKind::ShapeMismatch, "concat requires equal spatial size");
  FeatureMap<Scalar> out;
  out.height = a.height;
  out.width = a.width;
  out.data.resize(a.channels() + b.channels(), a.data.cols());
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

template <typename Scalar>
std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> split_channels(const FeatureMap<Scalar>& x, Eigen::Index first) {
  return {FeatureMap<Scalar>(x.data.topRows(first), x.height, x.width),
          FeatureMap<Scalar>(x.data.bottomRows(x.channels() - first), x.height, x.width)};
}

}  // namespace falcon::nn
