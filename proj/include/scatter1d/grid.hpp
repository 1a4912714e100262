#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "scatter1d/error.hpp"

namespace scatter1d {

/// Uniform discretization of an interval of the line.
struct SpatialGrid {
  double x_min = -20.0;
  double x_max = 20.0;
  std::size_t n = 2001;

  SpatialGrid() = default;
  SpatialGrid(double lo, double hi, std::size_t count) : x_min(lo), x_max(hi), n(count) {
    require(lo < hi, ErrorKind::InvalidArgument, "grid requires x_min < x_max");
    require(count >= 2, ErrorKind::InvalidArgument, "grid requires at least two points");
  }

  /// Grid with the given spacing; the right end is rounded to the nearest node.
  static SpatialGrid with_spacing(double lo, double hi, double dx) {
    auto cells = static_cast<std::size_t>(std::llround((hi - lo) / dx));
    if (cells < 1) cells = 1;
    return SpatialGrid(lo, lo + static_cast<double>(cells) * dx, cells + 1);
  }

  double dx() const { return (x_max - x_min) / static_cast<double>(n - 1); }
  double operator[](std::size_t i) const {
    return i + 1 == n ? x_max : x_min + static_cast<double>(i) * dx();
  }
  std::size_t size() const { return n; }

  std::vector<double> points() const {
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = (*this)[i];
    return xs;
  }

  /// Index of the node nearest to x, clamped to the grid.
  std::size_t nearest(double x) const {
    double t = std::round((x - x_min) / dx());
    if (t < 0) return 0;
    if (t > static_cast<double>(n - 1)) return n - 1;
    return static_cast<std::size_t>(t);
  }

  bool contains(double x) const { return x >= x_min && x <= x_max; }

  /// Same spacing, restricted to the nodes inside [lo, hi].
  SpatialGrid restrict_to(double lo, double hi) const {
    const double h = dx();
    auto first = static_cast<std::size_t>(std::ceil((lo - x_min) / h - 1e-9));
    auto last = static_cast<std::size_t>(std::floor((hi - x_min) / h + 1e-9));
    if (last >= n) last = n - 1;
    require(last > first, ErrorKind::InvalidArgument, "restricted grid has fewer than two nodes");
    return SpatialGrid((*this)[first], (*this)[last], last - first + 1);
  }

  bool operator==(const SpatialGrid&) const = default;
};

/// Uniform wavenumber grid k_j = j * k_max / n_k, j = 1..n_k (k = 0 excluded).
inline std::vector<double> uniform_k_grid(double k_max, std::size_t n_k) {
  require(k_max > 0, ErrorKind::InvalidArgument, "k_max must be positive");
  require(n_k >= 2, ErrorKind::InvalidArgument, "k grid requires at least two points");
  std::vector<double> ks(n_k);
  const double dk = k_max / static_cast<double>(n_k);
  for (std::size_t j = 0; j < n_k; ++j) ks[j] = dk * static_cast<double>(j + 1);
  return ks;
}

}  // namespace scatter1d
