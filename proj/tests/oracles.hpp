#pragma once

// Independent closed forms used as test oracles.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <utility>
#include <vector>

namespace oracle {

using cd = std::complex<double>;
inline constexpr cd I{0.0, 1.0};

/// One-soliton V = -2 sech^2 x.
inline cd soliton_left(double k, double x) { return std::exp(I * k * x) * (k + I * std::tanh(x)) / (k + I); }
inline cd soliton_left_slope(double k, double x) {
  const double s = 1.0 / std::cosh(x);
  return I * k * soliton_left(k, x) + std::exp(I * k * x) * I * s * s / (k + I);
}
inline cd soliton_right(double k, double x) { return std::exp(-I * k * x) * (k - I * std::tanh(x)) / (k + I); }
inline cd soliton_transmission(double k) { return (k + I) / (k - I); }

/// Exact propagation of (y, y') through piecewise-constant V: on a cell of constant
/// V, y'' = -q^2 y with q^2 = k^2 - V.
struct PiecewiseConstant {
  std::vector<double> breakpoints;
  std::vector<double> values;

  double at(double x) const {
    for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
      if (x >= breakpoints[i] && x < breakpoints[i + 1]) return values[i];
    return 0.0;
  }

  static void step(cd k2, double v, double h, cd& y, cd& dy) {
    const cd q = std::sqrt(k2 - v);
    if (std::abs(q) < 1e-14) {
      y = y + h * dy;
      return;
    }
    const cd c = std::cos(q * h), s = std::sin(q * h);
    const cd y1 = c * y + s / q * dy;
    const cd dy1 = -q * s * y + c * dy;
    y = y1;
    dy = dy1;
  }

  /// Walks from `from` to `to`, splitting at breakpoints.
  void propagate(cd k, double from, double to, cd& y, cd& dy) const {
    std::vector<double> cuts{from};
    for (double b : breakpoints)
      if ((b - from) * (b - to) < 0) cuts.push_back(b);
    cuts.push_back(to);
    if (to < from)
      std::sort(cuts.begin() + 1, cuts.end() - 1, std::greater<>());
    else
      std::sort(cuts.begin() + 1, cuts.end() - 1);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
      step(k * k, at(mid), cuts[i + 1] - cuts[i], y, dy);
    }
  }

  /// f_l(k, x): e^{ikx} right of the support.
  std::pair<cd, cd> left(cd k, double x) const {
    const double start = std::max(x, breakpoints.back());
    cd y = std::exp(I * k * start), dy = I * k * y;
    propagate(k, start, x, y, dy);
    return {y, dy};
  }

  /// f_r(k, x): e^{-ikx} left of the support.
  std::pair<cd, cd> right(cd k, double x) const {
    const double start = std::min(x, breakpoints.front());
    cd y = std::exp(-I * k * start), dy = -I * k * y;
    propagate(k, start, x, y, dy);
    return {y, dy};
  }

  /// T and L from f_l = (1/T) e^{ikx} + (L/T) e^{-ikx} left of the support.
  std::pair<cd, cd> transmission_reflection(double k) const {
    const double x = breakpoints.front();
    auto [y, dy] = left(k, x);
    const cd a = (I * k * y + dy) * std::exp(-I * k * x) / (2.0 * I * k);
    const cd b = (I * k * y - dy) * std::exp(I * k * x) / (2.0 * I * k);
    return {1.0 / a, b / a};
  }
};

/// Deepest even bound state of a well of depth d and half-width h: on
/// 0 < q < min(pi/2, sqrt d) the map q -> q tan(q h) - sqrt(d - q^2) increases
/// through a single root; kappa = sqrt(d - q^2). Bisection.
inline double even_well_state(double depth, double half_width) {
  auto f = [&](double q) { return q * std::tan(q * half_width) - std::sqrt(depth - q * q); };
  double lo = 0.0, hi = std::min(std::acos(-1.0) / (2.0 * half_width), std::sqrt(depth)) * (1.0 - 1e-15);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  const double q = 0.5 * (lo + hi);
  return std::sqrt(depth - q * q);
}

}  // namespace oracle
