#include "falcon/network.hpp"

namespace falcon {

void NetworkConfig::validate() const {
  if (depth < 2) throw Error(ErrorKind::InvalidArgument, "network.depth must be >= 2");
  if (int(channels.size()) != depth)
    throw Error(ErrorKind::InvalidArgument, "network.channels must list one width per level");
  for (int c : channels)
    if (c < 1) throw Error(ErrorKind::InvalidArgument, "network.channels must be positive");
  if (bottleneck_channels < 1) throw Error(ErrorKind::InvalidArgument, "network.bottleneck_channels must be positive");
  const int f = 1 << (depth - 1);
  if (height < f || width < f || height % f != 0 || width % f != 0)
    throw Error(ErrorKind::InvalidArgument, "network input size must be a multiple of 2^(depth-1)");
  if (support_size < 0) throw Error(ErrorKind::InvalidArgument, "network.support_size must be >= 0");
}

NetworkConfig NetworkConfig::toy() { return {}; }

NetworkConfig NetworkConfig::large_backbone() {
  NetworkConfig c;
  c.depth = 5;
  c.channels = {24, 40, 80, 192, 320};
  c.bottleneck_channels = 320;
  c.height = 224;
  c.width = 224;
  c.encoder = EncoderKind::LargeBackbone;
  return c;
}

void DiscriminatorConfig::validate() const {
  if (channels.empty()) throw Error(ErrorKind::InvalidArgument, "disc.channels must be non-empty");
  for (int c : channels)
    if (c < 1) throw Error(ErrorKind::InvalidArgument, "disc.channels must be positive");
  if (leaky_slope < 0) throw Error(ErrorKind::InvalidArgument, "disc.leaky_slope must be >= 0");
  if (dropout_rate < 0 || dropout_rate >= 1) throw Error(ErrorKind::InvalidArgument, "disc.dropout_rate must be in [0,1)");
}

ComputeCount count_params_flops(const NetworkConfig& cfg) {
  const Segmenter<float> net(cfg);
  ComputeCount out;
  out.params = net.param_count();
  long long macs = 0;
  int h = cfg.height, w = cfg.width;
  std::vector<std::pair<int, int>> sizes;
  for (int l = 0; l < cfg.depth; ++l) {
    const auto& blk = net.encoder[l];
    macs += blk.a.macs(h, w);
    h = blk.a.out_size(h);
    w = blk.a.out_size(w);
    macs += blk.b.macs(h, w);
    sizes.emplace_back(h, w);
  }
  if (net.has_projection) macs += net.projection.macs(h, w);
  macs += net.bridge.macs(h, w);
  for (int l = cfg.depth - 2; l >= 0; --l) macs += net.decoder[l].macs(sizes[l].first, sizes[l].second);
  macs += net.head.macs(cfg.height, cfg.width);
  out.flops = 2 * macs;
  return out;
}

const char* to_string(EncoderKind k) { return k == EncoderKind::ToyConv ? "toy_conv" : "large_backbone"; }
const char* to_string(Aggregation a) { return a == Aggregation::Sum ? "sum" : "mean"; }

}  // namespace falcon
