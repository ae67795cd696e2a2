#pragma once

// Test-only reference implementations. Deliberately naive: nothing here calls
// into the library code paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "falcon/geometry.hpp"

namespace falcon::oracle {

inline Eigen::ArrayXXd brute_force_dt(const BinaryMask& m) {
  const auto rows = m.rows(), cols = m.cols();
  Eigen::ArrayXXd out(rows, cols);
  bool any = false;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) any = any || m(r, c);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!any) {
        out(r, c) = std::sqrt(double(rows * rows + cols * cols));
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index qr = 0; qr < rows; ++qr)
        for (Eigen::Index qc = 0; qc < cols; ++qc)
          if (m(qr, qc)) best = std::min(best, std::sqrt(double((r - qr) * (r - qr) + (c - qc) * (c - qc))));
      out(r, c) = best;
    }
  }
  return out;
}

inline std::vector<double> brute_force_min_distances(const PixelSet& u, const PixelSet& v) {
  std::vector<double> out;
  for (const auto& p : u) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : v) {
      const double dr = p.row - q.row, dc = p.col - q.col;
      best = std::min(best, std::sqrt(dr * dr + dc * dc));
    }
    out.push_back(best);
  }
  return out;
}

inline double brute_force_hd(const PixelSet& u, const PixelSet& v) {
  const auto d = brute_force_min_distances(u, v);
  return *std::max_element(d.begin(), d.end());
}

/// Linear interpolation between closest ranks, written out longhand.
inline double reference_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = (q / 100.0) * double(v.size() - 1);
  const double lower = std::floor(pos);
  const std::size_t i = std::size_t(lower);
  if (i + 1 >= v.size()) return v.back();
  const double frac = pos - lower;
  return v[i] * (1.0 - frac) + v[i + 1] * frac;
}

inline double brute_force_dsc(const BinaryMask& u, const BinaryMask& v) {
  double inter = 0, nu = 0, nv = 0;
  for (Eigen::Index r = 0; r < u.rows(); ++r)
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
      nu += u(r, c);
      nv += v(r, c);
      inter += u(r, c) && v(r, c);
    }
  return 2 * inter / (nu + nv);
}

/// Object pixels of `m` having a 4-neighbour that is background or off-grid.
inline PixelSet brute_force_boundary(const BinaryMask& m) {
  PixelSet out;
  const int rows = int(m.rows()), cols = int(m.cols());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!m(r, c)) continue;
      const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || cc < 0 || rr >= rows || cc >= cols || !m(rr, cc)) {
          out.push_back({r, c});
          break;
        }
      }
    }
  return out;
}

inline BinaryMask random_mask(std::mt19937_64& rng, int rows, int cols, double density) {
  std::bernoulli_distribution b(density);
  BinaryMask m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m.set(r, c, b(rng));
  return m;
}

/// Central finite difference of f at every listed coordinate of x.
inline std::vector<double> central_differences(const std::function<double(const Eigen::ArrayXXd&)>& f,
                                               Eigen::ArrayXXd x, const std::vector<std::pair<int, int>>& at,
                                               double h) {
  std::vector<double> out;
  for (auto [r, c] : at) {
    const double orig = x(r, c);
    x(r, c) = orig + h;
    const double fp = f(x);
    x(r, c) = orig - h;
    const double fm = f(x);
    x(r, c) = orig;
    out.push_back((fp - fm) / (2 * h));
  }
  return out;
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace falcon::oracle
