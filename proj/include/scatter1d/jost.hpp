#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "json.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"
#include "scatter1d/parallel.hpp"
#include "scatter1d/potential.hpp"

namespace scatter1d {

using cd = std::complex<double>;
inline constexpr cd I{0.0, 1.0};

enum class Side { Left, Right };

/// Step control for the Runge-Kutta integration of -y'' + V y = k^2 y.
struct IntegratorOptions {
  /// Largest RK4 step. Zero means "one step per requested interval".
  double max_step = 0.02;
  /// Upper bound on omega * h with omega^2 = |k^2| + |V|; keeps the oscillatory
  /// amplitude error of RK4 below the unitarity budget at large k. Zero disables it.
  double phase_step = 0.025;
};

struct WaveState {
  cd y;
  cd dy;
};

/// Advances solutions of y'' = (V - k^2) y. Steps are split at the potential's
/// breakpoints; intervals where V vanishes identically are crossed with the exact
/// free propagator.
class Propagator {
 public:
  Propagator(const Potential& v, IntegratorOptions options = {}) : v_(v), options_(options) {}

  WaveState advance(cd k2, WaveState s, double from, double to) const {
    if (from == to) return s;
    const auto& bp = v_.breakpoints();
    if (from < to) {
      auto it = std::upper_bound(bp.begin(), bp.end(), from);
      double p = from;
      for (; it != bp.end() && *it < to; ++it) {
        s = segment(k2, s, p, *it);
        p = *it;
      }
      return segment(k2, s, p, to);
    }
    auto it = std::lower_bound(bp.begin(), bp.end(), from);
    double p = from;
    while (it != bp.begin()) {
      --it;
      if (*it <= to) break;
      s = segment(k2, s, p, *it);
      p = *it;
    }
    return segment(k2, s, p, to);
  }

  const Potential& potential() const { return v_; }
  const IntegratorOptions& options() const { return options_; }

 private:
  // [p, q] (either orientation) contains no breakpoint in its interior.
  WaveState segment(cd k2, WaveState s, double p, double q) const {
    const double lo = std::min(p, q);
    const double hi = std::max(p, q);
    const auto [s_lo, s_hi] = v_.support();
    if (v_.is_zero() || hi <= s_lo || lo >= s_hi) return free(k2, s, q - p);

    const int dir = q > p ? +1 : -1;
    const double length = hi - lo;
    std::size_t steps = 1;
    if (options_.max_step > 0)
      steps = std::max<std::size_t>(steps, static_cast<std::size_t>(std::ceil(length / options_.max_step - 1e-9)));
    if (options_.phase_step > 0) {
      const double vmax = std::max({std::abs(v_.limit(p, dir)), std::abs(v_.limit(q, -dir)),
                                    std::abs(v_(0.5 * (p + q)))});
      const double omega = std::sqrt(std::abs(k2) + vmax);
      steps = std::max<std::size_t>(steps, static_cast<std::size_t>(std::ceil(omega * length / options_.phase_step)));
    }
    const double h = (q - p) / static_cast<double>(steps);
    double va = v_.limit(p, dir);
    for (std::size_t i = 0; i < steps; ++i) {
      const double a = p + h * static_cast<double>(i);
      const double b = i + 1 == steps ? q : a + h;
      const double vm = v_(a + 0.5 * h);
      const double vb = v_.limit(b, -dir);
      s = rk4(k2, s, b - a, va, vm, vb);
      va = v_.limit(b, dir);
    }
    return s;
  }

  static WaveState rk4(cd k2, WaveState u, double h, double va, double vm, double vb) {
    auto f = [&](double v, const WaveState& w) { return WaveState{w.dy, (v - k2) * w.y}; };
    const WaveState k1 = f(va, u);
    const WaveState k2s = f(vm, {u.y + 0.5 * h * k1.y, u.dy + 0.5 * h * k1.dy});
    const WaveState k3 = f(vm, {u.y + 0.5 * h * k2s.y, u.dy + 0.5 * h * k2s.dy});
    const WaveState k4 = f(vb, {u.y + h * k3.y, u.dy + h * k3.dy});
    return {u.y + h / 6.0 * (k1.y + 2.0 * k2s.y + 2.0 * k3.y + k4.y),
            u.dy + h / 6.0 * (k1.dy + 2.0 * k2s.dy + 2.0 * k3.dy + k4.dy)};
  }

  static WaveState free(cd k2, WaveState s, double h) {
    const cd sk = std::sqrt(-k2);  // s^2 = -k^2
    if (std::abs(sk) == 0.0) return {s.y + h * s.dy, s.dy};
    const cd c = std::cosh(sk * h);
    const cd sh = std::sinh(sk * h);
    return {s.y * c + s.dy * sh / sk, s.y * sk * sh + s.dy * c};
  }

  const Potential& v_;
  IntegratorOptions options_;
};

/// Values and x-derivatives of a Jost solution on a grid.
struct JostField {
  cd k;
  Side side = Side::Left;
  SpatialGrid grid;
  std::vector<cd> values;
  std::vector<cd> derivatives;
};

/// Asymptotic data imposed at the starting edge: e^{ikx} at x_max (Left), e^{-ikx} at x_min (Right).
inline WaveState jost_boundary(cd k, Side side, double x) {
  if (side == Side::Left) {
    const cd e = std::exp(I * k * x);
    return {e, I * k * e};
  }
  const cd e = std::exp(-I * k * x);
  return {e, -I * k * e};
}

/// Jost solution at ascending sample points; integration starts at `line.x_max`
/// (Left) or `line.x_min` (Right), outside of which V is treated as zero. At k = 0
/// this is the solution tending to 1 at the starting end.
inline std::vector<WaveState> jost_or_zero_mode_at(const Propagator& prop, cd k, Side side, const SpatialGrid& line,
                                                   std::span<const double> points) {
  std::vector<WaveState> out(points.size());
  const cd k2 = k * k;
  if (side == Side::Left) {
    double x = line.x_max;
    WaveState s = jost_boundary(k, side, x);
    for (std::size_t i = points.size(); i-- > 0;) {
      s = prop.advance(k2, s, x, points[i]);
      x = points[i];
      out[i] = s;
    }
  } else {
    double x = line.x_min;
    WaveState s = jost_boundary(k, side, x);
    for (std::size_t i = 0; i < points.size(); ++i) {
      s = prop.advance(k2, s, x, points[i]);
      x = points[i];
      out[i] = s;
    }
  }
  return out;
}

inline std::vector<WaveState> jost_at(const Propagator& prop, cd k, Side side, const SpatialGrid& line,
                                      std::span<const double> points) {
  require(std::abs(k) > 0, ErrorKind::ZeroWavenumber, "k = 0 is excluded");
  return jost_or_zero_mode_at(prop, k, side, line, points);
}

inline JostField solve_jost(const Potential& v, cd k, Side side, const SpatialGrid& grid,
                            IntegratorOptions options = {}) {
  Propagator prop(v, options);
  const auto xs = grid.points();
  const auto states = jost_at(prop, k, side, grid, xs);
  JostField f{k, side, grid, {}, {}};
  f.values.reserve(states.size());
  f.derivatives.reserve(states.size());
  for (const auto& s : states) {
    f.values.push_back(s.y);
    f.derivatives.push_back(s.dy);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Scattering coefficients

struct ScatteringCoefficients {
  std::vector<double> k;
  std::vector<cd> T;
  std::vector<cd> L;
  std::vector<cd> R;
  /// Transmission extracted from the right Jost solution; agrees with T.
  std::vector<cd> T_right;
};

struct BoundState {
  double kappa = 0.0;
  double m_minus = 0.0;
  double m_plus = 0.0;
};

struct ScatteringData {
  ScatteringCoefficients coefficients;
  std::vector<BoundState> bound_states;
};

struct TwoWave {
  cd incoming;   // coefficient of e^{ikx}
  cd outgoing;   // coefficient of e^{-ikx}
};

inline TwoWave decompose(cd k, const WaveState& s, double x) {
  const cd ik = I * k;
  return {(ik * s.y + s.dy) * std::exp(-ik * x) / (2.0 * ik), (ik * s.y - s.dy) * std::exp(ik * x) / (2.0 * ik)};
}

/// T, L from f_l's two-wave form at x_min; R (and a second T) from f_r at x_max.
inline ScatteringCoefficients scattering_coefficients(const Potential& v, std::span<const double> k_grid,
                                                      const SpatialGrid& grid, IntegratorOptions options = {}) {
  for (double k : k_grid) require(k > 0, ErrorKind::InvalidArgument, "k grid must be positive");
  ScatteringCoefficients c;
  c.k.assign(k_grid.begin(), k_grid.end());
  c.T.resize(k_grid.size());
  c.L.resize(k_grid.size());
  c.R.resize(k_grid.size());
  c.T_right.resize(k_grid.size());
  Propagator prop(v, options);
  parallel_for(k_grid.size(), [&](std::size_t j) {
    const double k = k_grid[j];
    const double lo[] = {grid.x_min};
    const double hi[] = {grid.x_max};
    const WaveState fl = jost_at(prop, k, Side::Left, grid, lo)[0];
    const WaveState fr = jost_at(prop, k, Side::Right, grid, hi)[0];
    const TwoWave left = decompose(k, fl, grid.x_min);
    const TwoWave right = decompose(k, fr, grid.x_max);
    if (!(std::abs(left.incoming) > 1e-300) || !(std::abs(right.outgoing) > 1e-300) ||
        !std::isfinite(std::abs(left.outgoing)) || !std::isfinite(std::abs(right.incoming)))
      throw Error(ErrorKind::DegenerateMatching, "wave decomposition is singular at k = " + std::to_string(k));
    c.T[j] = 1.0 / left.incoming;
    c.L[j] = left.outgoing / left.incoming;
    c.T_right[j] = 1.0 / right.outgoing;
    c.R[j] = right.incoming / right.outgoing;
  });
  return c;
}

// ---------------------------------------------------------------------------
// Bound states

/// Natural size of f_l f_r' - f_l' f_r at k = i kappa: (kappa|f_l| + |f_l'|)(kappa|f_r| + |f_r'|).
inline double wronskian_scale(double kappa, cd fl, cd dfl, cd fr, cd dfr) {
  return (kappa * std::abs(fl) + std::abs(dfl)) * (kappa * std::abs(fr) + std::abs(dfr));
}

/// Wronskian f_l f_r' - f_l' f_r at k = i kappa, evaluated at the matching point,
/// together with its scale.
struct WronskianSample {
  double value = 0.0;
  double scale = 0.0;
  WaveState left;
  WaveState right;
  double relative() const { return scale > 0 ? std::abs(value) / scale : 0.0; }
};

inline double matching_point(const SpatialGrid& grid) { return grid[grid.n / 2]; }

inline WronskianSample bound_wronskian(const Propagator& prop, double kappa, const SpatialGrid& grid) {
  const double xm[] = {matching_point(grid)};
  const cd k{0.0, kappa};
  const WaveState fl = jost_at(prop, k, Side::Left, grid, xm)[0];
  const WaveState fr = jost_at(prop, k, Side::Right, grid, xm)[0];
  const double w = (fl.y * fr.dy - fl.dy * fr.y).real();
  return {w, wronskian_scale(kappa, fl.y, fl.dy, fr.y, fr.dy), fl, fr};
}

struct BoundStateScan {
  std::size_t points = 400;
  double kappa_floor = 1e-4;
  double tolerance = 1e-10;
};

/// Bound-state decay rates: sign changes of the Wronskian on a log-spaced kappa
/// scan (each cell refined once at its midpoint), bisected to `tolerance`.
inline std::vector<double> find_bound_states(const Potential& v, const SpatialGrid& grid,
                                             IntegratorOptions options = {}, BoundStateScan scan = {}) {
  const double ceil = std::sqrt(std::max(0.0, -v.lower_bound())) + 0.5;
  Propagator prop(v, options);
  const std::size_t n = scan.points;
  // nodes at even positions, cell midpoints at odd positions
  std::vector<double> kappas(2 * n - 1);
  for (std::size_t i = 0; i < n; ++i)
    kappas[2 * i] = scan.kappa_floor * std::pow(ceil / scan.kappa_floor, static_cast<double>(i) / (n - 1));
  for (std::size_t i = 0; i + 1 < n; ++i) kappas[2 * i + 1] = std::sqrt(kappas[2 * i] * kappas[2 * i + 2]);
  std::vector<double> w(kappas.size());
  parallel_for(kappas.size(), [&](std::size_t i) { w[i] = bound_wronskian(prop, kappas[i], grid).value; });

  auto sign = [](double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); };
  std::vector<std::pair<double, double>> brackets;
  for (std::size_t c = 0; c + 1 < n; ++c) {
    const int a = sign(w[2 * c]), m = sign(w[2 * c + 1]), b = sign(w[2 * c + 2]);
    const bool first = a * m <= 0 && a != 0;
    const bool second = m * b <= 0 && b != 0 && m != 0;
    if (first && second && a == b)
      throw Error(ErrorKind::ScanTooCoarse, "two Wronskian sign changes inside one scan cell near kappa = " +
                                                std::to_string(kappas[2 * c + 1]));
    if (a * b < 0 || (a != 0 && b == 0)) brackets.emplace_back(kappas[2 * c], kappas[2 * c + 2]);
  }

  std::vector<double> roots(brackets.size());
  parallel_for(brackets.size(), [&](std::size_t r) {
    auto [lo, hi] = brackets[r];
    const int s_lo = sign(bound_wronskian(prop, lo, grid).value);
    while (hi - lo > scan.tolerance) {
      const double mid = 0.5 * (lo + hi);
      const int s = sign(bound_wronskian(prop, mid, grid).value);
      if (s == 0) {
        lo = hi = mid;
        break;
      }
      (s == s_lo ? lo : hi) = mid;
    }
    roots[r] = 0.5 * (lo + hi);
  });
  std::sort(roots.begin(), roots.end());
  return roots;
}

/// Integral of |f|^2 over the grid: trapezoid with the Hermite end correction
/// (uses f' so it is fourth order on smooth cells).
inline double hermite_norm2(std::span<const double> f, std::span<const double> df, double dx) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    const double g0 = f[i] * f[i], g1 = f[i + 1] * f[i + 1];
    const double d0 = 2 * f[i] * df[i], d1 = 2 * f[i + 1] * df[i + 1];
    acc += 0.5 * dx * (g0 + g1) + dx * dx / 12.0 * (d0 - d1);
  }
  return acc;
}

/// Real bound-state eigenfunction normalized as f_r(i kappa, x) (= e^{kappa x} at -inf),
/// continued to the right of the matching point by the scaled left Jost solution so
/// that both halves are integrated in their stable direction. Also returns the
/// ratio gamma = f_r / f_l.
struct BoundEigenfunction {
  SpatialGrid grid;
  std::vector<double> values;
  std::vector<double> derivatives;
  double gamma = 0.0;
  double wronskian_relative = 0.0;
};

inline BoundEigenfunction bound_eigenfunction(const Potential& v, double kappa, const SpatialGrid& grid,
                                              IntegratorOptions options = {}) {
  const cd k{0.0, kappa};
  const JostField fl = solve_jost(v, k, Side::Left, grid, options);
  const JostField fr = solve_jost(v, k, Side::Right, grid, options);
  const std::size_t mid = grid.n / 2;
  const double w = (fl.values[mid] * fr.derivatives[mid] - fl.derivatives[mid] * fr.values[mid]).real();
  const double scale = wronskian_scale(kappa, fl.values[mid], fl.derivatives[mid], fr.values[mid], fr.derivatives[mid]);
  BoundEigenfunction e{grid, std::vector<double>(grid.n), std::vector<double>(grid.n), 0.0, scale > 0 ? std::abs(w) / scale : 0.0};
  // least-squares ratio from value and derivative at the matching point
  const double a = fl.values[mid].real(), da = fl.derivatives[mid].real();
  const double b = fr.values[mid].real(), db = fr.derivatives[mid].real();
  e.gamma = (a * b + da * db) / (a * a + da * da);
  for (std::size_t i = 0; i < grid.n; ++i) {
    if (i <= mid) {
      e.values[i] = fr.values[i].real();
      e.derivatives[i] = fr.derivatives[i].real();
    } else {
      e.values[i] = e.gamma * fl.values[i].real();
      e.derivatives[i] = e.gamma * fl.derivatives[i].real();
    }
  }
  return e;
}

/// f_r(i kappa, .) at ascending points. At a bound state the part right of the
/// matching point is taken from gamma * f_l, which decays in its integration direction.
inline std::vector<WaveState> right_jost_imaginary(const Propagator& prop, double kappa, const SpatialGrid& line,
                                                   std::span<const double> points) {
  const cd k{0.0, kappa};
  std::vector<WaveState> right = jost_at(prop, k, Side::Right, line, points);
  const WronskianSample w = bound_wronskian(prop, kappa, line);
  if (w.relative() >= 1e-6) return right;
  const double a = w.left.y.real(), da = w.left.dy.real();
  const double b = w.right.y.real(), db = w.right.dy.real();
  const double gamma = (a * b + da * db) / (a * a + da * da);
  const std::vector<WaveState> left = jost_at(prop, k, Side::Left, line, points);
  const double xm = matching_point(line);
  for (std::size_t i = 0; i < points.size(); ++i)
    if (points[i] > xm) right[i] = {gamma * left[i].y, gamma * left[i].dy};
  return right;
}

/// m- = ||f_r(i kappa)||^{-2}, m+ = ||f_l(i kappa)||^{-2}, with exponential tails
/// beyond the grid added analytically.
inline std::pair<double, double> norming_constants(const Potential& v, double kappa, const SpatialGrid& grid,
                                                   IntegratorOptions options = {}) {
  const BoundEigenfunction e = bound_eigenfunction(v, kappa, grid, options);
  if (e.wronskian_relative > 1e-6)
    throw Error(ErrorKind::NotABoundState,
                "Wronskian does not vanish at kappa = " + std::to_string(kappa) + " (relative " +
                    std::to_string(e.wronskian_relative) + ")");
  double norm2 = hermite_norm2(e.values, e.derivatives, grid.dx());
  norm2 += (e.values.front() * e.values.front() + e.values.back() * e.values.back()) / (2.0 * kappa);
  const double m_minus = 1.0 / norm2;
  const double m_plus = e.gamma * e.gamma * m_minus;
  return {m_minus, m_plus};
}

inline ScatteringData forward(const Potential& v, std::span<const double> k_grid, const SpatialGrid& grid,
                              IntegratorOptions options = {}, BoundStateScan scan = {}) {
  ScatteringData d;
  d.coefficients = scattering_coefficients(v, k_grid, grid, options);
  for (double kappa : find_bound_states(v, grid, options, scan)) {
    auto [mm, mp] = norming_constants(v, kappa, grid, options);
    d.bound_states.push_back({kappa, mm, mp});
  }
  return d;
}

/// max_k | |T|^2 + |L|^2 - 1 |
inline double unitarity_defect(const ScatteringCoefficients& c) {
  double worst = 0.0;
  for (std::size_t j = 0; j < c.k.size(); ++j)
    worst = std::max(worst, std::abs(std::norm(c.T[j]) + std::norm(c.L[j]) - 1.0));
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json_value(const ScatteringData& d) {
  const auto& c = d.coefficients;
  auto split = [](const std::vector<cd>& z, bool imag) {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = imag ? z[i].imag() : z[i].real();
    return out;
  };
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& b : d.bound_states) bs.push_back({{"kappa", b.kappa}, {"m_minus", b.m_minus}, {"m_plus", b.m_plus}});
  return {{"k", c.k},
          {"T_re", split(c.T, false)},
          {"T_im", split(c.T, true)},
          {"L_re", split(c.L, false)},
          {"L_im", split(c.L, true)},
          {"R_re", split(c.R, false)},
          {"R_im", split(c.R, true)},
          {"bound_states", bs}};
}

inline ScatteringData scattering_data_from_json(const nlohmann::json& j) {
  try {
    ScatteringData d;
    auto& c = d.coefficients;
    c.k = j.at("k").get<std::vector<double>>();
    auto join = [&](const char* re, const char* im) {
      const auto r = j.at(re).get<std::vector<double>>();
      const auto i = j.at(im).get<std::vector<double>>();
      require(r.size() == c.k.size() && i.size() == c.k.size(), ErrorKind::ParseError,
              std::string("column length mismatch for ") + re);
      std::vector<cd> z(r.size());
      for (std::size_t n = 0; n < r.size(); ++n) z[n] = {r[n], i[n]};
      return z;
    };
    c.T = join("T_re", "T_im");
    c.L = join("L_re", "L_im");
    c.R = join("R_re", "R_im");
    c.T_right = c.T;
    for (const auto& b : j.at("bound_states"))
      d.bound_states.push_back({b.at("kappa").get<double>(), b.at("m_minus").get<double>(), b.value("m_plus", 0.0)});
    std::sort(d.bound_states.begin(), d.bound_states.end(),
              [](const BoundState& a, const BoundState& b) { return a.kappa < b.kappa; });
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
}

/// Columns: k, T_re, T_im, L_re, L_im, R_re, R_im.
inline void write_scattering_csv(const std::string& path, const ScatteringData& d) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot open " + path);
  out.precision(17);
  out << "k,T_re,T_im,L_re,L_im,R_re,R_im\n";
  const auto& c = d.coefficients;
  for (std::size_t j = 0; j < c.k.size(); ++j)
    out << c.k[j] << "," << c.T[j].real() << "," << c.T[j].imag() << "," << c.L[j].real() << "," << c.L[j].imag()
        << "," << c.R[j].real() << "," << c.R[j].imag() << "\n";
}

}  // namespace scatter1d
