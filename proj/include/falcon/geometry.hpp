#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "falcon/error.hpp"

namespace falcon {

using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// H x W grid whose entries are exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(Eigen::Index rows, Eigen::Index cols);
  explicit BinaryMask(MaskGrid grid);

  Eigen::Index rows() const { return grid_.rows(); }
  Eigen::Index cols() const { return grid_.cols(); }
  Eigen::Index size() const { return grid_.size(); }

  std::uint8_t operator()(Eigen::Index r, Eigen::Index c) const { return grid_(r, c); }
  void set(Eigen::Index r, Eigen::Index c, bool on) { grid_(r, c) = on ? 1 : 0; }

  const MaskGrid& grid() const { return grid_; }
  Eigen::Index count() const;
  bool empty() const { return count() == 0; }

  template <typename Scalar>
  Grid<Scalar> as() const { return grid_.cast<Scalar>(); }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.grid_ == b.grid_).all();
  }

 private:
  MaskGrid grid_;
};

/// H x W grid of probabilities in [0, 1].
template <typename Scalar>
class ProbMap {
 public:
  ProbMap() = default;
  explicit ProbMap(Grid<Scalar> grid) : grid_(std::move(grid)) {
    if (grid_.size() == 0) throw Error(ErrorKind::InvalidArgument, "ProbMap must be non-empty");
    if (!grid_.allFinite() || (grid_ < Scalar(0)).any() || (grid_ > Scalar(1)).any())
      throw Error(ErrorKind::InvalidArgument, "ProbMap values must lie in [0,1]");
  }

  Eigen::Index rows() const { return grid_.rows(); }
  Eigen::Index cols() const { return grid_.cols(); }
  Eigen::Index size() const { return grid_.size(); }
  Scalar operator()(Eigen::Index r, Eigen::Index c) const { return grid_(r, c); }
  const Grid<Scalar>& grid() const { return grid_; }

 private:
  Grid<Scalar> grid_;
};

/// Per-pixel Euclidean distance (in pixels) to a target pixel set.
struct DistanceMap {
  Eigen::ArrayXXd grid;
  bool sentinel = false;  // target set was empty; every entry is the grid diagonal
};

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

using PixelSet = std::vector<Pixel>;

enum class DistanceConvention {
  ToObject,    // zero on every object pixel
  ToBoundary,  // zero only on 4-connected boundary pixels of the object
};

enum class Symmetrization { Max, Mean };

/// sqrt(H^2 + W^2); the value reported for distances to an empty set.
double sentinel_distance(Eigen::Index rows, Eigen::Index cols);

/// Exact Euclidean distance transform using the separable lower-envelope
/// method on squared distances. An all-zero mask yields the diagonal sentinel.
DistanceMap distance_transform(const BinaryMask& mask,
                               DistanceConvention convention = DistanceConvention::ToObject);

/// Object pixels with a 4-neighbour that is background or off-grid, in raster order.
PixelSet boundary_pixels(const BinaryMask& mask);

BinaryMask rasterize(const PixelSet& pixels, Eigen::Index rows, Eigen::Index cols);

/// 2|U n V| / (|U| + |V|). Throws BothEmpty if neither mask has object pixels.
double dsc(const BinaryMask& u, const BinaryMask& v);

/// For every p in u, min over q in v of |p - q|, in the order of u.
std::vector<double> surface_distances(const PixelSet& u, const PixelSet& v);

/// Linear interpolation between closest ranks; `q` in [0, 100].
double percentile(std::vector<double> values, double q);

double hd_directed(const PixelSet& u, const PixelSet& v);
double hd95(const PixelSet& u, const PixelSet& v);
double hd95_symmetric(const PixelSet& u, const PixelSet& v, Symmetrization how = Symmetrization::Max);

template <typename Scalar>
BinaryMask binarize(const ProbMap<Scalar>& pred, double threshold) {
  return BinaryMask((pred.grid() >= Scalar(threshold)).template cast<std::uint8_t>());
}

}  // namespace falcon
