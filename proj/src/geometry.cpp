#include "falcon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace falcon {

BinaryMask::BinaryMask(Eigen::Index rows, Eigen::Index cols) : grid_(MaskGrid::Zero(rows, cols)) {
  if (rows < 1 || cols < 1) throw Error(ErrorKind::InvalidArgument, "mask dimensions must be >= 1");
}

BinaryMask::BinaryMask(MaskGrid grid) : grid_(std::move(grid)) {
  if (grid_.rows() < 1 || grid_.cols() < 1)
    throw Error(ErrorKind::InvalidArgument, "mask dimensions must be >= 1");
  if ((grid_ > std::uint8_t(1)).any())
    throw Error(ErrorKind::InvalidArgument, "mask entries must be 0 or 1");
}

Eigen::Index BinaryMask::count() const { return grid_.cast<Eigen::Index>().sum(); }

double sentinel_distance(Eigen::Index rows, Eigen::Index cols) {
  return std::sqrt(double(rows) * double(rows) + double(cols) * double(cols));
}

namespace {

constexpr double kFar = std::numeric_limits<double>::max() / 4;

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void squared_dt_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = 0;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] = -inf guarantees termination
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double d = q - v[k];
    out[q] = d * d + f[v[k]];
  }
}

Eigen::ArrayXXd squared_edt(const MaskGrid& on) {
  const int rows = int(on.rows());
  const int cols = int(on.cols());
  Eigen::ArrayXXd g(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) g(r, c) = on(r, c) ? 0.0 : kFar;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> in(std::max(rows, cols)), out(std::max(rows, cols));
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) in[r] = g(r, c);
    squared_dt_1d(in.data(), out.data(), rows, v, z);
    for (int r = 0; r < rows; ++r) g(r, c) = out[r];
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) in[c] = g(r, c);
    squared_dt_1d(in.data(), out.data(), cols, v, z);
    for (int c = 0; c < cols; ++c) g(r, c) = out[c];
  }
  return g;
}

}  // namespace

PixelSet boundary_pixels(const BinaryMask& mask) {
  PixelSet out;
  const auto rows = mask.rows();
  const auto cols = mask.cols();
  auto on = [&](Eigen::Index r, Eigen::Index c) {
    return r >= 0 && c >= 0 && r < rows && c < cols && mask(r, c) != 0;
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!on(r, c)) continue;
      if (!on(r - 1, c) || !on(r + 1, c) || !on(r, c - 1) || !on(r, c + 1))
        out.push_back({int(r), int(c)});
    }
  }
  return out;
}

BinaryMask rasterize(const PixelSet& pixels, Eigen::Index rows, Eigen::Index cols) {
  BinaryMask m(rows, cols);
  for (const auto& p : pixels) {
    if (p.row < 0 || p.col < 0 || p.row >= rows || p.col >= cols)
      throw Error(ErrorKind::InvalidArgument, "pixel outside grid");
    m.set(p.row, p.col, true);
  }
  return m;
}

DistanceMap distance_transform(const BinaryMask& mask, DistanceConvention convention) {
  const BinaryMask target = convention == DistanceConvention::ToObject
                                ? mask
                                : rasterize(boundary_pixels(mask), mask.rows(), mask.cols());
  DistanceMap dm;
  if (target.empty()) {
    dm.grid = Eigen::ArrayXXd::Constant(mask.rows(), mask.cols(), sentinel_distance(mask.rows(), mask.cols()));
    dm.sentinel = true;
    return dm;
  }
  dm.grid = squared_edt(target.grid()).unaryExpr([](double v) { return std::sqrt(v); });
  return dm;
}

double dsc(const BinaryMask& u, const BinaryMask& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw Error(ErrorKind::ShapeMismatch, "dsc requires equal mask shapes");
  const auto nu = u.count();
  const auto nv = v.count();
  if (nu + nv == 0) throw Error(ErrorKind::BothEmpty, "both masks are empty");
  const auto inter = (u.grid() * v.grid()).cast<Eigen::Index>().sum();
  return 2.0 * double(inter) / double(nu + nv);
}

std::vector<double> surface_distances(const PixelSet& u, const PixelSet& v) {
  if (u.empty() || v.empty()) throw Error(ErrorKind::EmptySet, "surface distance needs non-empty sets");
  int r0 = v.front().row, r1 = r0, c0 = v.front().col, c1 = c0;
  for (const auto* set : {&u, &v}) {
    for (const auto& p : *set) {
      r0 = std::min(r0, p.row);
      r1 = std::max(r1, p.row);
      c0 = std::min(c0, p.col);
      c1 = std::max(c1, p.col);
    }
  }
  MaskGrid grid = MaskGrid::Zero(r1 - r0 + 1, c1 - c0 + 1);
  for (const auto& q : v) grid(q.row - r0, q.col - c0) = 1;
  const Eigen::ArrayXXd sq = squared_edt(grid);
  std::vector<double> out;
  out.reserve(u.size());
  for (const auto& p : u) out.push_back(std::sqrt(sq(p.row - r0, p.col - c0)));
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptySet, "percentile of empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw Error(ErrorKind::InvalidArgument, "percentile outside [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(rank));
  const auto hi = std::size_t(std::ceil(rank));
  return values[lo] + (rank - double(lo)) * (values[hi] - values[lo]);
}

double hd_directed(const PixelSet& u, const PixelSet& v) {
  const auto d = surface_distances(u, v);
  return *std::max_element(d.begin(), d.end());
}

double hd95(const PixelSet& u, const PixelSet& v) { return percentile(surface_distances(u, v), 95.0); }

double hd95_symmetric(const PixelSet& u, const PixelSet& v, Symmetrization how) {
  const double a = hd95(u, v);
  const double b = hd95(v, u);
  return how == Symmetrization::Max ? std::max(a, b) : 0.5 * (a + b);
}

}  // namespace falcon
