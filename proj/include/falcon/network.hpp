#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "falcon/geometry.hpp"
#include "falcon/nn.hpp"

namespace falcon {

using nn::FeatureMap;
using nn::Mat;

enum class EncoderKind { ToyConv, LargeBackbone };
enum class Aggregation { Sum, Mean };

struct NetworkConfig {
  int depth = 4;
  std::vector<int> channels{8, 16, 32, 32};
  int bottleneck_channels = 32;
  int height = 32;
  int width = 32;
  EncoderKind encoder = EncoderKind::ToyConv;
  int support_size = 5;
  Aggregation aggregation = Aggregation::Sum;
  bool relation_module = true;

  /// Spatial size of the bottleneck (H', W').
  int bottleneck_height() const { return height >> (depth - 1); }
  int bottleneck_width() const { return width >> (depth - 1); }

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;

  static NetworkConfig toy();
  static NetworkConfig large_backbone();
};

struct DiscriminatorConfig {
  std::vector<int> channels{16, 32, 64, 128};
  double leaky_slope = 0.2;
  double dropout_rate = 0.25;

  void validate() const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct ComputeCount {
  long long params = 0;
  long long flops = 0;  // 2 x multiply-accumulates for one query forward pass
};

ComputeCount count_params_flops(const NetworkConfig& cfg);

const char* to_string(EncoderKind k);
const char* to_string(Aggregation a);

// ---------------------------------------------------------------------------
// Segmentation network: encoder, relation module, decoder with skips.

template <typename Scalar>
struct EncoderBlock {
  nn::Conv2d<Scalar> a;  // stride 1 on level 1, stride 2 below
  nn::Conv2d<Scalar> b;
};

template <typename Scalar>
struct Segmenter {
  NetworkConfig config;
  std::vector<EncoderBlock<Scalar>> encoder;
  bool has_projection = false;
  nn::Conv2d<Scalar> projection;  // 1x1, only when the last level width differs from m
  nn::Conv2d<Scalar> bridge;      // deepest decoder layer, consumes the 2m-channel relation tensor
  std::vector<nn::Conv2d<Scalar>> decoder;  // decoder[l] produces level l+1, l = 0 .. L-2
  nn::Conv2d<Scalar> head;                  // 1x1 to a single logit channel

  Segmenter() = default;
  explicit Segmenter(const NetworkConfig& cfg) : config(cfg) {
    cfg.validate();
    const auto& ch = cfg.channels;
    const int L = cfg.depth;
    int in = 3;
    for (int l = 0; l < L; ++l) {
      encoder.push_back({nn::Conv2d<Scalar>(in, ch[l], 3, l == 0 ? 1 : 2), nn::Conv2d<Scalar>(ch[l], ch[l], 3, 1)});
      in = ch[l];
    }
    const int m = cfg.bottleneck_channels;
    has_projection = m != ch[L - 1];
    if (has_projection) projection = nn::Conv2d<Scalar>(ch[L - 1], m, 1, 1);
    bridge = nn::Conv2d<Scalar>(2 * m, ch[L - 1], 3, 1);
    decoder.resize(L - 1);
    for (int l = L - 2; l >= 0; --l) decoder[l] = nn::Conv2d<Scalar>(ch[l + 1] + ch[l], ch[l], 3, 1);
    head = nn::Conv2d<Scalar>(ch[0], 1, 1, 1);
  }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& blk : encoder) {
      blk.a.init(rng);
      blk.b.init(rng);
    }
    if (has_projection) projection.init(rng);
    bridge.init(rng);
    for (auto& d : decoder) d.init(rng);
    head.init(rng);
  }

  std::vector<nn::ParamRef<Scalar>> params() {
    std::vector<nn::ParamRef<Scalar>> out;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      encoder[l].a.append_params("encoder." + std::to_string(l + 1) + ".conv_a", out);
      encoder[l].b.append_params("encoder." + std::to_string(l + 1) + ".conv_b", out);
    }
    if (has_projection) projection.append_params("relation.projection", out);
    bridge.append_params("decoder." + std::to_string(encoder.size()) + ".conv", out);
    for (int l = int(decoder.size()) - 1; l >= 0; --l)
      decoder[l].append_params("decoder." + std::to_string(l + 1) + ".conv", out);
    head.append_params("head.conv1x1", out);
    return out;
  }

  long long param_count() const {
    long long n = 0;
    for (const auto& blk : encoder) n += blk.a.param_count() + blk.b.param_count();
    if (has_projection) n += projection.param_count();
    n += bridge.param_count() + head.param_count();
    for (const auto& d : decoder) n += d.param_count();
    return n;
  }

  void zero() {
    for (auto& p : params()) p.value->setZero();
  }
};

/// Per-level encoder features of one image; level l has channels[l] x H/2^l x W/2^l (0-based).
template <typename Scalar>
struct FeaturePyramid {
  std::vector<FeatureMap<Scalar>> levels;
  FeatureMap<Scalar> bottleneck;  // m x H' x W'
};

template <typename Scalar>
struct EncoderTape {
  std::vector<nn::ConvCache<Scalar>> a, b;
  std::vector<FeatureMap<Scalar>> a_out;
  nn::ConvCache<Scalar> projection;
};

template <typename Scalar>
void check_image(const NetworkConfig& cfg, const FeatureMap<Scalar>& image) {
  if (image.channels() != 3 || image.height != cfg.height || image.width != cfg.width)
    throw Error(ErrorKind::ShapeMismatch, "image must be 3x" + std::to_string(cfg.height) + "x" +
                                              std::to_string(cfg.width) + ", got " + std::to_string(image.channels()) +
                                              "x" + std::to_string(image.height) + "x" + std::to_string(image.width));
}

template <typename Scalar>
FeaturePyramid<Scalar> encode(const Segmenter<Scalar>& net, const FeatureMap<Scalar>& image,
                              EncoderTape<Scalar>* tape = nullptr) {
  check_image(net.config, image);
  const int L = net.config.depth;
  FeaturePyramid<Scalar> pyr;
  if (tape) {
    tape->a.resize(L);
    tape->b.resize(L);
    tape->a_out.resize(L);
  }
  const FeatureMap<Scalar>* x = &image;
  for (int l = 0; l < L; ++l) {
    auto h = nn::conv_forward(net.encoder[l].a, *x, tape ? &tape->a[l] : nullptr);
    nn::relu_inplace(h);
    auto o = nn::conv_forward(net.encoder[l].b, h, tape ? &tape->b[l] : nullptr);
    nn::relu_inplace(o);
    if (tape) tape->a_out[l] = std::move(h);
    pyr.levels.push_back(std::move(o));
    x = &pyr.levels.back();
  }
  if (net.has_projection)
    pyr.bottleneck = nn::conv_forward(net.projection, pyr.levels.back(), tape ? &tape->projection : nullptr);
  else
    pyr.bottleneck = pyr.levels.back();
  return pyr;
}

/// `d_levels[l]` may be empty (no gradient into that level).
template <typename Scalar>
void encode_backward(const Segmenter<Scalar>& net, const FeaturePyramid<Scalar>& pyr, const EncoderTape<Scalar>& tape,
                     std::vector<FeatureMap<Scalar>> d_levels, const FeatureMap<Scalar>& d_bottleneck,
                     Segmenter<Scalar>& grad) {
  const int L = net.config.depth;
  d_levels.resize(L);
  auto accumulate = [](FeatureMap<Scalar>& dst, FeatureMap<Scalar>&& src) {
    if (dst.empty())
      dst = std::move(src);
    else
      dst.data += src.data;
  };
  if (!d_bottleneck.empty()) {
    if (net.has_projection)
      accumulate(d_levels[L - 1], nn::conv_backward(net.projection, tape.projection, d_bottleneck, grad.projection));
    else
      accumulate(d_levels[L - 1], FeatureMap<Scalar>(d_bottleneck));
  }
  for (int l = L - 1; l >= 0; --l) {
    if (d_levels[l].empty()) continue;
    FeatureMap<Scalar> d = std::move(d_levels[l]);
    nn::relu_backward_inplace(pyr.levels[l], d);
    auto dh = nn::conv_backward(net.encoder[l].b, tape.b[l], d, grad.encoder[l].b);
    nn::relu_backward_inplace(tape.a_out[l], dh);
    auto dx = nn::conv_backward(net.encoder[l].a, tape.a[l], dh, grad.encoder[l].a, l > 0);
    if (l > 0) accumulate(d_levels[l - 1], std::move(dx));
  }
}

/// Patient-specific prototype: element-wise sum (or mean) of the support bottlenecks.
/// Each element is summed in sorted order so the result is bit-identical under any
/// permutation of the supports.
template <typename Scalar>
FeatureMap<Scalar> support_prototype(std::span<const FeatureMap<Scalar>> features,
                                     Aggregation how = Aggregation::Sum) {
  if (features.empty()) throw Error(ErrorKind::EmptySupport, "prototype needs at least one support map");
  const auto& first = features.front();
  for (const auto& f : features)
    if (!f.same_shape(first)) throw Error(ErrorKind::ShapeMismatch, "support feature shapes differ");
  FeatureMap<Scalar> proto(first.channels(), first.height, first.width);
  const std::size_t k = features.size();
  std::vector<Scalar> buf(k);
  for (Eigen::Index i = 0; i < first.data.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) buf[j] = features[j].data.data()[i];
    std::sort(buf.begin(), buf.end());
    Scalar s = 0;
    for (Scalar v : buf) s += v;
    proto.data.data()[i] = how == Aggregation::Mean ? s / Scalar(k) : s;
  }
  return proto;
}

/// Channel-wise concatenation [query; prototype].
template <typename Scalar>
FeatureMap<Scalar> relate(const FeatureMap<Scalar>& query_bottleneck, const FeatureMap<Scalar>& prototype) {
  if (!query_bottleneck.same_shape(prototype))
    throw Error(ErrorKind::ShapeMismatch, "query bottleneck and prototype differ in shape");
  return nn::concat_channels(query_bottleneck, prototype);
}

template <typename Scalar>
struct DecoderTape {
  nn::ConvCache<Scalar> bridge;
  FeatureMap<Scalar> bridge_out;
  std::vector<nn::ConvCache<Scalar>> level;
  std::vector<FeatureMap<Scalar>> level_out;
  nn::ConvCache<Scalar> head;
  Mat<Scalar> prob;  // 1 x HW
};

/// Sigmoid probabilities (1 x HW) for the query.
template <typename Scalar>
Mat<Scalar> decode(const Segmenter<Scalar>& net, const FeatureMap<Scalar>& rel, const FeaturePyramid<Scalar>& pyr,
                   DecoderTape<Scalar>* tape = nullptr) {
  const int L = net.config.depth;
  if (rel.channels() != 2 * net.config.bottleneck_channels || rel.height != pyr.levels[L - 1].height ||
      rel.width != pyr.levels[L - 1].width)
    throw Error(ErrorKind::ShapeMismatch, "relation tensor does not match the pyramid bottleneck");
  auto x = nn::conv_forward(net.bridge, rel, tape ? &tape->bridge : nullptr);
  nn::relu_inplace(x);
  if (tape) {
    tape->level.resize(L - 1);
    tape->level_out.resize(L - 1);
    tape->bridge_out = x;
  }
  for (int l = L - 2; l >= 0; --l) {
    auto up = nn::upsample2x(x);
    auto cat = nn::concat_channels(up, pyr.levels[l]);
    x = nn::conv_forward(net.decoder[l], cat, tape ? &tape->level[l] : nullptr);
    nn::relu_inplace(x);
    if (tape) tape->level_out[l] = x;
  }
  auto logits = nn::conv_forward(net.head, x, tape ? &tape->head : nullptr);
  Mat<Scalar> prob = nn::sigmoid(logits.data);
  if (tape) tape->prob = prob;
  return prob;
}

template <typename Scalar>
struct DecodeGrad {
  FeatureMap<Scalar> d_rel;
  std::vector<FeatureMap<Scalar>> d_skip;  // one per encoder level; last entry empty
};

template <typename Scalar>
DecodeGrad<Scalar> decode_backward(const Segmenter<Scalar>& net, const DecoderTape<Scalar>& tape,
                                   const Mat<Scalar>& d_prob, Segmenter<Scalar>& grad) {
  const int L = net.config.depth;
  const int h = net.config.height, w = net.config.width;
  FeatureMap<Scalar> d_logit((d_prob.array() * tape.prob.array() * (Scalar(1) - tape.prob.array())).matrix(), h, w);
  auto dx = nn::conv_backward(net.head, tape.head, d_logit, grad.head);
  DecodeGrad<Scalar> out;
  out.d_skip.resize(L);
  for (int l = 0; l <= L - 2; ++l) {
    nn::relu_backward_inplace(tape.level_out[l], dx);
    auto d_cat = nn::conv_backward(net.decoder[l], tape.level[l], dx, grad.decoder[l]);
    const Eigen::Index up_channels = net.decoder[l].in_channels - net.config.channels[l];
    auto [d_up, d_skip] = nn::split_channels(d_cat, up_channels);
    out.d_skip[l] = std::move(d_skip);
    dx = nn::upsample2x_backward(d_up);
  }
  nn::relu_backward_inplace(tape.bridge_out, dx);
  out.d_rel = nn::conv_backward(net.bridge, tape.bridge, dx, grad.bridge);
  return out;
}

// ---------------------------------------------------------------------------
// Episode-level composition.

/// Encoded support set of one task.
template <typename Scalar>
struct SupportPass {
  std::vector<FeaturePyramid<Scalar>> pyramids;
  std::vector<EncoderTape<Scalar>> tapes;
  FeatureMap<Scalar> prototype;
};

template <typename Scalar>
SupportPass<Scalar> forward_support(const Segmenter<Scalar>& net, std::span<const FeatureMap<Scalar>> images,
                                    bool keep_tape) {
  SupportPass<Scalar> pass;
  if (!net.config.relation_module) return pass;
  if (images.empty()) throw Error(ErrorKind::EmptySupport, "support set is empty");
  std::vector<FeatureMap<Scalar>> bottlenecks;
  for (const auto& img : images) {
    EncoderTape<Scalar> tape;
    auto pyr = encode(net, img, keep_tape ? &tape : nullptr);
    bottlenecks.push_back(pyr.bottleneck);
    if (keep_tape) {
      pass.pyramids.push_back(std::move(pyr));
      pass.tapes.push_back(std::move(tape));
    }
  }
  pass.prototype = support_prototype<Scalar>(bottlenecks, net.config.aggregation);
  return pass;
}

template <typename Scalar>
void backward_support(const Segmenter<Scalar>& net, const SupportPass<Scalar>& pass,
                      const FeatureMap<Scalar>& d_prototype, Segmenter<Scalar>& grad) {
  if (!net.config.relation_module || d_prototype.empty()) return;
  FeatureMap<Scalar> d = d_prototype;
  if (net.config.aggregation == Aggregation::Mean) d.data /= Scalar(pass.tapes.size());
  for (std::size_t j = 0; j < pass.tapes.size(); ++j) encode_backward(net, pass.pyramids[j], pass.tapes[j], {}, d, grad);
}

/// Forward state of one query conditioned on a prototype.
template <typename Scalar>
struct QueryPass {
  FeaturePyramid<Scalar> pyramid;
  EncoderTape<Scalar> enc;
  DecoderTape<Scalar> dec;
  Mat<Scalar> prob;
};

template <typename Scalar>
QueryPass<Scalar> forward_query(const Segmenter<Scalar>& net, const FeatureMap<Scalar>& image,
                                const FeatureMap<Scalar>& prototype, bool keep_tape) {
  QueryPass<Scalar> pass;
  pass.pyramid = encode(net, image, keep_tape ? &pass.enc : nullptr);
  // Without the relation module the query bottleneck stands in for the prototype.
  const auto& proto = net.config.relation_module ? prototype : pass.pyramid.bottleneck;
  const auto rel = relate(pass.pyramid.bottleneck, proto);
  pass.prob = decode(net, rel, pass.pyramid, keep_tape ? &pass.dec : nullptr);
  return pass;
}

/// Backpropagates d(loss)/d(prob) through the query path; returns d(prototype).
template <typename Scalar>
FeatureMap<Scalar> backward_query(const Segmenter<Scalar>& net, const QueryPass<Scalar>& pass,
                                  const Mat<Scalar>& d_prob, Segmenter<Scalar>& grad) {
  auto dg = decode_backward(net, pass.dec, d_prob, grad);
  const Eigen::Index m = net.config.bottleneck_channels;
  auto [d_query, d_proto] = nn::split_channels(dg.d_rel, m);
  if (!net.config.relation_module) {
    d_query.data += d_proto.data;
    d_proto = {};
  }
  encode_backward(net, pass.pyramid, pass.enc, std::move(dg.d_skip), d_query, grad);
  return d_proto;
}

template <typename Scalar>
ProbMap<Scalar> to_prob_map(const Mat<Scalar>& prob, int height, int width) {
  Grid<Scalar> g(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) g(r, c) = prob(0, Eigen::Index(r) * width + c);
  return ProbMap<Scalar>(std::move(g));
}

template <typename Scalar>
Mat<Scalar> from_grid(const Grid<Scalar>& g) {
  Mat<Scalar> m(1, g.size());
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) m(0, r * g.cols() + c) = g(r, c);
  return m;
}

/// Full model evaluation f(query | supports).
template <typename Scalar>
ProbMap<Scalar> forward(const Segmenter<Scalar>& net, const FeatureMap<Scalar>& query,
                        std::span<const FeatureMap<Scalar>> supports) {
  const auto sp = forward_support(net, supports, false);
  const auto qp = forward_query(net, query, sp.prototype, false);
  return to_prob_map(qp.prob, net.config.height, net.config.width);
}

// ---------------------------------------------------------------------------
// Mask discriminator.

template <typename Scalar>
struct Discriminator {
  DiscriminatorConfig config;
  int height = 0;
  int width = 0;
  std::vector<nn::Conv2d<Scalar>> convs;
  std::vector<nn::BatchNorm<Scalar>> norms;  // norms[i] follows convs[i + 1]
  nn::Linear<Scalar> fc;

  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, int h, int w) : config(cfg), height(h), width(w) {
    cfg.validate();
    int in = 1;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      convs.emplace_back(in, cfg.channels[i], 3, 2);
      if (i > 0) norms.emplace_back(cfg.channels[i]);
      in = cfg.channels[i];
    }
    fc = nn::Linear<Scalar>(in, 1);
  }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& c : convs) c.init(rng);
    fc.init(rng);
  }

  std::vector<nn::ParamRef<Scalar>> params() {
    std::vector<nn::ParamRef<Scalar>> out;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].append_params("disc.conv" + std::to_string(i + 1), out);
      if (i > 0) norms[i - 1].append_params("disc.bn" + std::to_string(i + 1), out);
    }
    fc.append_params("disc.fc", out);
    return out;
  }

  std::vector<nn::ParamRef<Scalar>> buffers() {
    std::vector<nn::ParamRef<Scalar>> out;
    for (std::size_t i = 0; i < norms.size(); ++i) norms[i].append_buffers("disc.bn" + std::to_string(i + 2), out);
    return out;
  }

  void zero() {
    for (auto& p : params()) p.value->setZero();
  }
};

enum class DiscMode {
  Eval,        // running statistics, no dropout
  Train,       // batch statistics, dropout, running statistics updated
  TrainFrozen  // batch statistics and dropout, running statistics left untouched
};

template <typename Scalar>
struct DiscTape {
  struct Layer {
    std::vector<nn::ConvCache<Scalar>> conv;
    std::vector<Mat<Scalar>> pre;   // input to the leaky ReLU
    std::vector<Mat<Scalar>> xhat;  // normalized conv output (BN layers)
    std::vector<Mat<Scalar>> drop;  // dropout multipliers (train modes)
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
    int out_h = 0, out_w = 0;
  };
  std::vector<Layer> layers;
  std::vector<Mat<Scalar>> pooled;  // C x 1 per sample
  std::vector<double> scores;
  DiscMode mode = DiscMode::Eval;
};

/// Probability that each mask is a ground-truth mask.
template <typename Scalar, typename Rng = std::mt19937_64>
std::vector<double> discriminate(Discriminator<Scalar>& disc, std::span<const FeatureMap<Scalar>> masks, DiscMode mode,
                                 Rng* rng = nullptr, DiscTape<Scalar>* tape = nullptr) {
  if (masks.empty()) throw Error(ErrorKind::EmptyBatch, "discriminator batch is empty");
  for (const auto& m : masks)
    if (m.channels() != 1 || m.height != disc.height || m.width != disc.width)
      throw Error(ErrorKind::ShapeMismatch, "discriminator input must be 1x" + std::to_string(disc.height) + "x" +
                                                std::to_string(disc.width));
  const bool training = mode != DiscMode::Eval;
  if (training && disc.config.dropout_rate > 0 && !rng)
    throw Error(ErrorKind::InvalidArgument, "training-mode discriminator needs an rng for dropout");
  const Scalar slope = Scalar(disc.config.leaky_slope);
  const std::size_t n = masks.size();
  std::vector<FeatureMap<Scalar>> x(masks.begin(), masks.end());
  if (tape) {
    tape->layers.assign(disc.convs.size(), {});
    tape->mode = mode;
  }
  for (std::size_t li = 0; li < disc.convs.size(); ++li) {
    typename DiscTape<Scalar>::Layer* lt = tape ? &tape->layers[li] : nullptr;
    if (lt) lt->conv.resize(n);
    std::vector<FeatureMap<Scalar>> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = nn::conv_forward(disc.convs[li], x[i], lt ? &lt->conv[i] : nullptr);
    const Eigen::Index c = z[0].channels();
    if (lt) {
      lt->out_h = z[0].height;
      lt->out_w = z[0].width;
    }
    if (li > 0) {
      auto& bn = disc.norms[li - 1];
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean, var;
      if (training) {
        const double count = double(n) * double(z[0].data.cols());
        Eigen::VectorXd s = Eigen::VectorXd::Zero(c), s2 = Eigen::VectorXd::Zero(c);
        for (const auto& zi : z) s += zi.data.template cast<double>().rowwise().sum();
        const Eigen::VectorXd mu = s / count;
        for (const auto& zi : z)
          s2 += (zi.data.template cast<double>().colwise() - mu).array().square().matrix().rowwise().sum();
        const Eigen::VectorXd v = s2 / count;
        mean = mu.cast<Scalar>();
        var = v.cast<Scalar>();
        if (mode == DiscMode::Train) {
          const Scalar mom = Scalar(bn.momentum);
          bn.running_mean.col(0) = (Scalar(1) - mom) * bn.running_mean.col(0) + mom * mean;
          const Scalar unbias = count > 1 ? Scalar(count / (count - 1)) : Scalar(1);
          bn.running_var.col(0) = (Scalar(1) - mom) * bn.running_var.col(0) + mom * unbias * var;
        }
      } else {
        mean = bn.running_mean.col(0);
        var = bn.running_var.col(0);
      }
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std =
          (var.array() + Scalar(bn.eps)).rsqrt().matrix();
      if (lt) lt->inv_std = inv_std;
      for (std::size_t i = 0; i < n; ++i) {
        Mat<Scalar> xhat = (z[i].data.colwise() - mean).array().colwise() * inv_std.array();
        z[i].data = (xhat.array().colwise() * bn.gamma.col(0).array()).colwise() + bn.beta.col(0).array();
        if (lt) lt->xhat.push_back(std::move(xhat));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (lt) lt->pre.push_back(z[i].data);
      nn::leaky_relu_inplace(z[i].data, slope);
      if (li > 0 && training && disc.config.dropout_rate > 0) {
        const double keep = 1.0 - disc.config.dropout_rate;
        std::bernoulli_distribution bern(keep);
        Mat<Scalar> mask(z[i].data.rows(), z[i].data.cols());
        for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = bern(*rng) ? Scalar(1.0 / keep) : Scalar(0);
        z[i].data = z[i].data.cwiseProduct(mask);
        if (lt) lt->drop.push_back(std::move(mask));
      }
    }
    x = std::move(z);
  }
  std::vector<double> scores(n);
  if (tape) tape->pooled.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Mat<Scalar> pooled = x[i].data.rowwise().mean();
    const Scalar logit = (disc.fc.weight * pooled)(0, 0) + disc.fc.bias(0, 0);
    scores[i] = 1.0 / (1.0 + std::exp(-double(logit)));
    if (tape) tape->pooled[i] = std::move(pooled);
  }
  if (tape) tape->scores = scores;
  return scores;
}

/// Returns d(loss)/d(mask) per sample and accumulates parameter gradients.
template <typename Scalar>
std::vector<FeatureMap<Scalar>> discriminate_backward(const Discriminator<Scalar>& disc, const DiscTape<Scalar>& tape,
                                                      std::span<const double> d_scores, Discriminator<Scalar>& grad) {
  const std::size_t n = tape.scores.size();
  if (d_scores.size() != n) throw Error(ErrorKind::ShapeMismatch, "score gradient count mismatch");
  const Scalar slope = Scalar(disc.config.leaky_slope);
  const bool training = tape.mode != DiscMode::Eval;
  std::vector<FeatureMap<Scalar>> d(n);
  const auto& last = tape.layers.back();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = tape.scores[i];
    const Scalar d_logit = Scalar(d_scores[i] * s * (1.0 - s));
    grad.fc.weight += d_logit * tape.pooled[i].transpose();
    grad.fc.bias(0, 0) += d_logit;
    const Mat<Scalar> d_pool = disc.fc.weight.transpose() * d_logit;
    const Eigen::Index hw = Eigen::Index(last.out_h) * last.out_w;
    d[i] = FeatureMap<Scalar>(d_pool.replicate(1, hw) / Scalar(hw), last.out_h, last.out_w);
  }
  for (int li = int(disc.convs.size()) - 1; li >= 0; --li) {
    const auto& lt = tape.layers[li];
    const bool dropped = li > 0 && training && disc.config.dropout_rate > 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (dropped) d[i].data = d[i].data.cwiseProduct(lt.drop[i]);
      nn::leaky_relu_backward_inplace(lt.pre[i], d[i].data, slope);
    }
    if (li > 0) {
      const auto& bn = disc.norms[li - 1];
      auto& g = grad.norms[li - 1];
      const Eigen::Index c = d[0].channels();
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_dy = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(c);
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_dy_xhat = sum_dy;
      for (std::size_t i = 0; i < n; ++i) {
        sum_dy += d[i].data.rowwise().sum();
        sum_dy_xhat += d[i].data.cwiseProduct(lt.xhat[i]).rowwise().sum();
      }
      g.gamma.col(0) += sum_dy_xhat;
      g.beta.col(0) += sum_dy;
      const Scalar count = Scalar(double(n) * double(d[0].data.cols()));
      for (std::size_t i = 0; i < n; ++i) {
        Mat<Scalar> dxhat = d[i].data.array().colwise() * bn.gamma.col(0).array();
        if (training) {
          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dxhat =
              (sum_dy.array() * bn.gamma.col(0).array()).matrix() / count;
          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dxhat_xhat =
              (sum_dy_xhat.array() * bn.gamma.col(0).array()).matrix() / count;
          dxhat = dxhat.colwise() - mean_dxhat;
          dxhat -= (lt.xhat[i].array().colwise() * mean_dxhat_xhat.array()).matrix();
        }
        d[i].data = dxhat.array().colwise() * lt.inv_std.array();
      }
    }
    for (std::size_t i = 0; i < n; ++i) d[i] = nn::conv_backward(disc.convs[li], lt.conv[i], d[i], grad.convs[li]);
  }
  return d;
}

/// FNV-1a over the raw bytes of every parameter, in declaration order.
template <typename Model>
std::uint64_t weight_checksum(Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : model.params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value->data());
    const std::size_t len = std::size_t(p.value->size()) * sizeof(*p.value->data());
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace falcon
