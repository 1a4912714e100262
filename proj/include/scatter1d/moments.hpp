#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"
#include "scatter1d/jost.hpp"
#include "scatter1d/potential.hpp"

namespace scatter1d {

struct MomentOptions {
  /// Integration line: Jost solutions start at its ends, and -infinity in the
  /// window integral is replaced by line.x_min.
  SpatialGrid line{};
  IntegratorOptions integrator{};
  /// Largest |V_A - V_B| accepted on the window.
  double window_tolerance = 1e-12;
};

/// f_r (of potential A) and f~_r (of potential B) at k = i kappa on a window grid.
struct ProductColumn {
  double kappa = 0.0;
  std::vector<double> f, df, g, dg;

  double value(std::size_t i) const { return f[i] * g[i]; }
  double slope(std::size_t i) const { return df[i] * g[i] + f[i] * dg[i]; }
};

struct ProductTable {
  SpatialGrid window;
  std::vector<ProductColumn> columns;

  const ProductColumn& at(double kappa) const {
    for (const auto& c : columns)
      if (c.kappa == kappa) return c;
    throw Error(ErrorKind::InvalidArgument, "no product column for kappa = " + std::to_string(kappa));
  }

  /// (f_r f~_r)(i kappa, x) by cubic Hermite interpolation between window nodes.
  double value_at(double kappa, double x) const {
    const ProductColumn& c = at(kappa);
    const double h = window.dx();
    double t = (x - window.x_min) / h;
    require(t >= -1e-9 && t <= static_cast<double>(window.n - 1) + 1e-9, ErrorKind::InvalidArgument,
            "x lies outside the window");
    auto i = static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(window.n - 2)));
    const double s = t - static_cast<double>(i);
    if (s <= 1e-12) return c.value(i);
    if (s >= 1.0 - 1e-12) return c.value(i + 1);
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * c.value(i) + h10 * h * c.slope(i) + h01 * c.value(i + 1) + h11 * h * c.slope(i + 1);
  }
};

inline ProductTable product_fields(const Potential& a, const Potential& b, std::span<const double> kappas_a,
                                   std::span<const double> kappas_b, const SpatialGrid& window,
                                   const MomentOptions& options = {}) {
  std::vector<double> kappas(kappas_a.begin(), kappas_a.end());
  kappas.insert(kappas.end(), kappas_b.begin(), kappas_b.end());
  std::sort(kappas.begin(), kappas.end());
  kappas.erase(std::unique(kappas.begin(), kappas.end()), kappas.end());
  for (double k : kappas) require(k > 0, ErrorKind::InvalidArgument, "kappas must be positive");

  ProductTable table{window, std::vector<ProductColumn>(kappas.size())};
  const auto xs = window.points();
  const Propagator pa(a, options.integrator), pb(b, options.integrator);
  parallel_for(kappas.size(), [&](std::size_t j) {
    const auto fa = right_jost_imaginary(pa, kappas[j], options.line, xs);
    const auto fb = right_jost_imaginary(pb, kappas[j], options.line, xs);
    ProductColumn& c = table.columns[j];
    c.kappa = kappas[j];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      c.f.push_back(fa[i].y.real());
      c.df.push_back(fa[i].dy.real());
      c.g.push_back(fb[i].y.real());
      c.dg.push_back(fb[i].dy.real());
    }
  });
  return table;
}

inline std::vector<double> kappas_of(std::span<const BoundState> data) {
  std::vector<double> out;
  for (const auto& s : data) out.push_back(s.kappa);
  return out;
}

/// sum_A (kappa^2)^l m- (f_r f~_r)(i kappa, x) - sum_B (likewise).
inline double moment_expression(int l, double x, std::span<const BoundState> a, std::span<const BoundState> b,
                                const ProductTable& table) {
  require(l >= 0, ErrorKind::InvalidArgument, "moment order must be non-negative");
  double acc = 0.0;
  for (const auto& s : a) acc += std::pow(s.kappa * s.kappa, l) * s.m_minus * table.value_at(s.kappa, x);
  for (const auto& s : b) acc -= std::pow(s.kappa * s.kappa, l) * s.m_minus * table.value_at(s.kappa, x);
  return acc;
}

inline void require_equal_on_window(const Potential& a, const Potential& b, const SpatialGrid& window,
                                    double tolerance) {
  for (std::size_t i = 0; i < window.n; ++i) {
    const double x = window[i];
    const double d = std::abs(a(x) - b(x));
    if (d > tolerance)
      throw Error(ErrorKind::WindowMismatch,
                  "potentials differ by " + std::to_string(d) + " at x = " + std::to_string(x));
  }
}

struct WindowConstancy {
  /// Moment expression at x = a.
  double c0_moment = 0.0;
  /// (1/2) int_{-inf}^{a} (V_B - V_A) by quadrature.
  double c0_integral = 0.0;
  double mismatch = 0.0;
  /// max over the window of |moment expression - c0_moment|.
  double max_deviation = 0.0;
};

inline WindowConstancy window_constancy(std::span<const BoundState> data_a, std::span<const BoundState> data_b,
                                        const Potential& a, const Potential& b, const SpatialGrid& window,
                                        const MomentOptions& options = {}) {
  require_equal_on_window(a, b, window, options.window_tolerance);
  const ProductTable table = product_fields(a, b, kappas_of(data_a), kappas_of(data_b), window, options);
  WindowConstancy out;
  out.c0_moment = moment_expression(0, window.x_min, data_a, data_b, table);
  out.c0_integral = 0.5 * (integrate(b, options.line.x_min, window.x_min) - integrate(a, options.line.x_min, window.x_min));
  out.mismatch = std::abs(out.c0_moment - out.c0_integral);
  for (std::size_t i = 0; i < window.n; ++i)
    out.max_deviation =
        std::max(out.max_deviation, std::abs(moment_expression(0, window[i], data_a, data_b, table) - out.c0_moment));
  return out;
}

struct MomentReport {
  Window window{0.0, 1.0};
  int l_max = 0;
  std::vector<double> C;
  /// residuals[l][i]: moment expression of order l at window node i minus C[l].
  std::vector<std::vector<double>> residuals;
  std::vector<double> max_deviation;
  /// max relative residual of (f g)'' = (V + V~ + 2 kappa^2) f g + 2 f' g'.
  double product_identity = 0.0;
  /// max relative residual of (f' g')' = (V + kappa^2) f g' + (V~ + kappa^2) f' g.
  double derivative_identity = 0.0;
};

/// Fourth-order central difference of a column at node i (2 <= i <= n-3).
inline double central_slope(std::span<const double> y, std::size_t i, double h) {
  return (-y[i + 2] + 8.0 * y[i + 1] - 8.0 * y[i - 1] + y[i - 2]) / (12.0 * h);
}

/// Product-rule identities at every kappa of the table, checked against fourth-order
/// differences of the analytic first-derivative columns. Returns {product, derivative}.
inline std::pair<double, double> cascade_identities(const ProductTable& table, const Potential& a, const Potential& b) {
  const SpatialGrid& w = table.window;
  const double h = w.dx();
  std::vector<double> breaks = a.jump_candidates();
  breaks.insert(breaks.end(), b.jump_candidates().begin(), b.jump_candidates().end());
  auto clear = [&](std::size_t i) {
    for (double x : breaks)
      if (x > w[i - 2] - 1e-12 && x < w[i + 2] + 1e-12) return false;
    return true;
  };
  double worst_product = 0.0, worst_derivative = 0.0;
  for (const auto& c : table.columns) {
    const double k2 = c.kappa * c.kappa;
    std::vector<double> p1(w.n), q(w.n);
    for (std::size_t i = 0; i < w.n; ++i) {
      p1[i] = c.slope(i);
      q[i] = c.df[i] * c.dg[i];
    }
    for (std::size_t i = 2; i + 2 < w.n; ++i) {
      if (!clear(i)) continue;
      const double va = a(w[i]), vb = b(w[i]);
      const double rhs1 = (va + vb + 2.0 * k2) * c.value(i) + 2.0 * q[i];
      const double rhs2 = (va + k2) * c.f[i] * c.dg[i] + (vb + k2) * c.df[i] * c.g[i];
      worst_product =
          std::max(worst_product, std::abs(central_slope(p1, i, h) - rhs1) / std::max(1.0, std::abs(rhs1)));
      worst_derivative =
          std::max(worst_derivative, std::abs(central_slope(q, i, h) - rhs2) / std::max(1.0, std::abs(rhs2)));
    }
  }
  return {worst_product, worst_derivative};
}

inline MomentReport derivative_cascade_check(std::span<const BoundState> data_a, std::span<const BoundState> data_b,
                                             const Potential& a, const Potential& b, const SpatialGrid& window,
                                             int l_max = -1, const MomentOptions& options = {}) {
  require_equal_on_window(a, b, window, options.window_tolerance);
  if (l_max < 0) l_max = std::max(0, 2 * static_cast<int>(data_a.size() + data_b.size()) - 1);
  const ProductTable table = product_fields(a, b, kappas_of(data_a), kappas_of(data_b), window, options);
  MomentReport r;
  r.window = Window(window.x_min, window.x_max);
  r.l_max = l_max;
  for (int l = 0; l <= l_max; ++l) {
    const double c = moment_expression(l, window.x_min, data_a, data_b, table);
    std::vector<double> dev(window.n);
    double worst = 0.0;
    for (std::size_t i = 0; i < window.n; ++i) {
      dev[i] = moment_expression(l, window[i], data_a, data_b, table) - c;
      worst = std::max(worst, std::abs(dev[i]));
    }
    r.C.push_back(c);
    r.residuals.push_back(std::move(dev));
    r.max_deviation.push_back(worst);
  }
  std::tie(r.product_identity, r.derivative_identity) = cascade_identities(table, a, b);
  return r;
}

// ---------------------------------------------------------------------------
// Zeros of real solutions

struct SimpleZero {
  double x = 0.0;
  double slope = 0.0;
  bool simple = true;
};

/// Zeros of a real grid function with known derivative: sign changes between nodes
/// (and exact node zeros), bisected with `evaluate(i, x) -> {y, y'}` on [x_i, x_{i+1}]
/// until the bracket is below `tolerance`. Throws NonSimpleZero when a zero has
/// |y'| <= 1e-8 * sup|y| / window length.
template <class Eval>
std::vector<SimpleZero> zeros_of(const SpatialGrid& window, std::span<const double> y, Eval evaluate,
                                 double tolerance = 1e-10) {
  double sup = 0.0;
  for (double v : y) sup = std::max(sup, std::abs(v));
  const double floor = 1e-8 * sup / (window.x_max - window.x_min);
  std::vector<SimpleZero> out;
  auto record = [&](double x, double slope) {
    if (!(std::abs(slope) > floor))
      throw Error(ErrorKind::NonSimpleZero, "zero at x = " + std::to_string(x) + " is not simple");
    out.push_back({x, slope, true});
  };
  for (std::size_t i = 0; i < window.n; ++i) {
    if (y[i] == 0.0) {
      record(window[i], evaluate(i == window.n - 1 ? i - 1 : i, window[i]).second);
      continue;
    }
    if (i + 1 == window.n || y[i + 1] == 0.0 || (y[i] > 0) == (y[i + 1] > 0)) continue;
    double lo = window[i], hi = window[i + 1];
    const bool rising = y[i] < 0;
    while (hi - lo > tolerance) {
      const double mid = 0.5 * (lo + hi);
      const double v = evaluate(i, mid).first;
      if (v == 0.0) {
        lo = hi = mid;
        break;
      }
      ((v < 0) == rising ? lo : hi) = mid;
    }
    const double x = 0.5 * (lo + hi);
    record(x, evaluate(i, x).second);
  }
  return out;
}

/// Zeros on the window of the real solution attached to each k: Im f_l(k, .) for
/// real k > 0, f_l(i kappa, .) for k = i kappa.
inline std::vector<std::vector<SimpleZero>> find_zeros_simple(const Potential& v, std::span<const cd> k_values,
                                                              const SpatialGrid& window,
                                                              const MomentOptions& options = {}) {
  const Propagator prop(v, options.integrator);
  const auto xs = window.points();
  std::vector<std::vector<SimpleZero>> out(k_values.size());
  parallel_for(k_values.size(), [&](std::size_t j) {
    const cd k = k_values[j];
    const bool real_k = k.imag() == 0.0 && k.real() > 0.0;
    const bool imaginary_k = k.real() == 0.0 && k.imag() > 0.0;
    require(real_k || imaginary_k, ErrorKind::InvalidArgument, "k must be real positive or i kappa with kappa > 0");
    auto part = [&](cd z) { return real_k ? z.imag() : z.real(); };
    const auto states = jost_at(prop, k, Side::Left, options.line, xs);
    std::vector<double> y(states.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = part(states[i].y);
    const cd k2 = k * k;
    out[j] = zeros_of(window, y, [&](std::size_t i, double x) {
      const WaveState s = prop.advance(k2, states[i], xs[i], x);
      return std::pair{part(s.y), part(s.dy)};
    });
  });
  return out;
}

/// Zeros of (f_r f~_r)(i kappa, .) from a product table (Hermite interpolation between nodes).
inline std::vector<SimpleZero> product_zeros(const ProductTable& table, double kappa) {
  const ProductColumn& c = table.at(kappa);
  std::vector<double> y(table.window.n);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = c.value(i);
  const double h = table.window.dx();
  return zeros_of(table.window, y, [&](std::size_t i, double x) {
    const double s = (x - table.window[i]) / h;
    const double y0 = c.value(i), y1 = c.value(i + 1), d0 = c.slope(i) * h, d1 = c.slope(i + 1) * h;
    const double value = (1 + 2 * s) * (1 - s) * (1 - s) * y0 + s * (1 - s) * (1 - s) * d0 +
                         s * s * (3 - 2 * s) * y1 + s * s * (s - 1) * d1;
    const double dvalue = (6 * s * s - 6 * s) * y0 + (3 * s * s - 4 * s + 1) * d0 + (-6 * s * s + 6 * s) * y1 +
                          (3 * s * s - 2 * s) * d1;
    return std::pair{value, dvalue / h};
  });
}

/// Window node farthest from every listed zero (smallest such x on ties); the
/// window midpoint when there are no zeros.
inline double common_nonzero_point(std::span<const double> zeros, const SpatialGrid& window) {
  if (zeros.empty()) return 0.5 * (window.x_min + window.x_max);
  double best_x = window.x_min, best_d = -1.0;
  const double tie = 1e-12 * std::max(1.0, window.x_max - window.x_min);
  for (std::size_t i = 0; i < window.n; ++i) {
    double d = std::numeric_limits<double>::infinity();
    for (double z : zeros) d = std::min(d, std::abs(window[i] - z));
    if (d > best_d + tie) {
      best_d = d;
      best_x = window[i];
    }
  }
  return best_x;
}

// ---------------------------------------------------------------------------
// Prony recovery of nodes and weights from power moments

struct PronyOptions {
  /// Singular values below rank_threshold * (largest singular value) count as zero.
  double rank_threshold = 1e-10;
  /// Moments whose Hankel sets the singular-value scale instead of the input's own
  /// (used when the input is a difference of two larger sums).
  std::vector<double> reference_moments{};
  /// Nodes are divided by this before the Hankel matrix is formed.
  double node_scale = 1.0;
  /// Weights below weight_threshold * max|weight| are dropped.
  double weight_threshold = 1e-8;
  double imaginary_tolerance = 1e-6;
  /// Minimum ratio between the last kept and the first discarded singular value.
  double gap_ratio = 10.0;
  int polish_iterations = 30;
};

struct PronyResult {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<std::pair<std::size_t, std::size_t>> matched_pairs;
  std::vector<std::size_t> dropped;
  std::size_t rank = 0;
  std::vector<double> singular_values;
};

namespace detail {

inline Eigen::MatrixXd hankel(std::span<const double> mu, std::size_t m) {
  Eigen::MatrixXd H(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) H(i, j) = mu[i + j];
  return H;
}

inline std::vector<double> scaled(std::span<const double> mu, double s) {
  std::vector<double> out(mu.size());
  double p = 1.0;
  for (std::size_t l = 0; l < mu.size(); ++l, p /= s) out[l] = mu[l] * p;
  return out;
}

inline double moment_misfit(const std::vector<double>& z, const std::vector<double>& w, std::span<const double> mu) {
  double acc = 0.0;
  for (std::size_t l = 0; l < mu.size(); ++l) {
    double s = -mu[l];
    for (std::size_t j = 0; j < z.size(); ++j) s += w[j] * std::pow(z[j], static_cast<double>(l));
    acc += s * s;
  }
  return acc;
}

/// Gauss-Newton on sum_l (sum_j w_j z_j^l - mu_l)^2, accepting only improving steps.
inline void polish(std::vector<double>& z, std::vector<double>& w, std::span<const double> mu, int iterations) {
  const std::size_t r = z.size(), L = mu.size();
  double cost = moment_misfit(z, w, mu);
  for (int it = 0; it < iterations && cost > 0; ++it) {
    Eigen::MatrixXd J(L, 2 * r);
    Eigen::VectorXd res(L);
    for (std::size_t l = 0; l < L; ++l) {
      double s = -mu[l];
      for (std::size_t j = 0; j < r; ++j) {
        const double p = std::pow(z[j], static_cast<double>(l));
        s += w[j] * p;
        J(l, j) = p;
        J(l, r + j) = l == 0 ? 0.0 : w[j] * static_cast<double>(l) * std::pow(z[j], static_cast<double>(l - 1));
      }
      res[l] = s;
    }
    const Eigen::VectorXd step = J.completeOrthogonalDecomposition().solve(-res);
    std::vector<double> z2 = z, w2 = w;
    for (std::size_t j = 0; j < r; ++j) {
      w2[j] += step[j];
      z2[j] += step[r + j];
    }
    const double next = moment_misfit(z2, w2, mu);
    if (!(next < cost)) break;
    z = std::move(z2);
    w = std::move(w2);
    cost = next;
  }
}

}  // namespace detail

/// Nodes lambda_j and weights a_j with mu_l = sum_j a_j lambda_j^l, l = 0..2M-1:
/// numerical rank of the M x M Hankel matrix, annihilating polynomial by least
/// squares, its roots as nodes, Vandermonde least squares for the weights.
inline PronyResult prony_recover(std::span<const double> moments, std::size_t M, const PronyOptions& options = {}) {
  require(moments.size() >= 2 * M, ErrorKind::InvalidArgument, "Prony needs 2M moments");
  require(options.node_scale > 0, ErrorKind::InvalidArgument, "node scale must be positive");
  PronyResult out;
  if (M == 0) return out;
  const std::vector<double> mu = detail::scaled(moments.first(2 * M), options.node_scale);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(detail::hankel(mu, M));
  const Eigen::VectorXd sigma = svd.singularValues();
  out.singular_values.assign(sigma.data(), sigma.data() + sigma.size());
  double scale = sigma[0];
  if (!options.reference_moments.empty()) {
    require(options.reference_moments.size() >= 2 * M, ErrorKind::InvalidArgument, "reference needs 2M moments");
    const auto ref = detail::scaled(std::span<const double>(options.reference_moments).first(2 * M), options.node_scale);
    scale = std::max(scale, Eigen::JacobiSVD<Eigen::MatrixXd>(detail::hankel(ref, M)).singularValues()[0]);
  }
  const double threshold = options.rank_threshold * scale;
  std::size_t r = 0;
  while (r < M && sigma[static_cast<Eigen::Index>(r)] > threshold) ++r;
  out.rank = r;
  if (r == 0) return out;
  const double next = r < M ? sigma[static_cast<Eigen::Index>(r)] : threshold;
  if (sigma[static_cast<Eigen::Index>(r - 1)] < options.gap_ratio * next)
    throw Error(ErrorKind::RankAmbiguous, "no clear singular-value gap at rank " + std::to_string(r));

  // monic annihilating polynomial z^r + c_{r-1} z^{r-1} + ... + c_0
  const std::size_t rows = 2 * M - r;
  Eigen::MatrixXd A(rows, r);
  Eigen::VectorXd rhs(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t t = 0; t < r; ++t) A(i, t) = mu[i + t];
    rhs[i] = -mu[i + r];
  }
  const Eigen::VectorXd c = A.completeOrthogonalDecomposition().solve(rhs);
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(r, r);
  for (std::size_t i = 1; i < r; ++i) companion(i, i - 1) = 1.0;
  for (std::size_t i = 0; i < r; ++i) companion(i, r - 1) = -c[i];
  const Eigen::VectorXcd roots = Eigen::EigenSolver<Eigen::MatrixXd>(companion, false).eigenvalues();

  std::vector<double> z;
  for (Eigen::Index i = 0; i < roots.size(); ++i) {
    const std::complex<double> root = roots[i];
    if (std::abs(root.imag()) > options.imaginary_tolerance * std::max(1.0, std::abs(root)))
      throw Error(ErrorKind::ComplexNodes, "annihilating polynomial has a complex root");
    if (!(root.real() > 0))
      throw Error(ErrorKind::ComplexNodes, "annihilating polynomial has a non-positive root");
    z.push_back(root.real());
  }
  std::sort(z.begin(), z.end());

  Eigen::MatrixXd V(2 * M, r);
  Eigen::VectorXd m(2 * M);
  for (std::size_t l = 0; l < 2 * M; ++l) {
    for (std::size_t j = 0; j < r; ++j) V(l, j) = std::pow(z[j], static_cast<double>(l));
    m[l] = mu[l];
  }
  const Eigen::VectorXd wv = V.completeOrthogonalDecomposition().solve(m);
  std::vector<double> w(wv.data(), wv.data() + wv.size());
  detail::polish(z, w, mu, options.polish_iterations);

  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return z[i] < z[j]; });
  double wmax = 0.0;
  for (double x : w) wmax = std::max(wmax, std::abs(x));
  for (std::size_t pos = 0; pos < r; ++pos) {
    const std::size_t j = order[pos];
    if (std::abs(w[j]) < options.weight_threshold * wmax) {
      out.dropped.push_back(pos);
      continue;
    }
    out.nodes.push_back(z[j] * options.node_scale);
    out.weights.push_back(w[j]);
  }
  return out;
}

/// mu_l = sum_j a_j lambda_j^l for l = 0..count-1.
inline std::vector<double> power_moments(std::span<const double> nodes, std::span<const double> weights,
                                         std::size_t count) {
  std::vector<double> mu(count, 0.0);
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    double p = weights[j];
    for (std::size_t l = 0; l < count; ++l, p *= nodes[j]) mu[l] += p;
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Matching of bound-state data at a common non-zero point

struct MatchOptions {
  /// Absolute tolerance on kappa^2 when pairing nodes.
  double node_tolerance = 1e-6;
  PronyOptions prony{};
};

struct MatchReport {
  bool mismatch = false;
  double x_prime = 0.0;
  /// Index pairs (into A, into B) whose nodes agree.
  std::vector<std::pair<std::size_t, std::size_t>> matched_pairs;
  /// Indices (into A, into B) carrying a net weight in the difference sequence.
  std::vector<std::size_t> offending_a, offending_b;
  /// Net weights left over by the difference sequence, at its nodes.
  PronyResult residual;
};

/// Weights a_j = m-_j (f_r f~_r)(i kappa_j, x'), likewise for B; Prony on the
/// difference of the two power-moment sequences in kappa^2. Identical data leave
/// rank zero; every surviving node points at offending indices.
inline MatchReport match_bound_data(std::span<const BoundState> a, std::span<const BoundState> b,
                                    const ProductTable& table, double x_prime, const MatchOptions& options = {}) {
  MatchReport out;
  out.x_prime = x_prime;
  // canonical order so that the outcome does not depend on the input order
  auto sorted = [](std::span<const BoundState> d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
      return d[i].kappa != d[j].kappa ? d[i].kappa < d[j].kappa : d[i].m_minus < d[j].m_minus;
    });
    return idx;
  };
  const auto ia = sorted(a), ib = sorted(b);
  std::vector<double> nodes, weights, magnitudes;
  double top = 0.0;
  for (std::size_t i : ia) {
    nodes.push_back(a[i].kappa * a[i].kappa);
    weights.push_back(a[i].m_minus * table.value_at(a[i].kappa, x_prime));
    top = std::max(top, nodes.back());
  }
  for (std::size_t i : ib) {
    nodes.push_back(b[i].kappa * b[i].kappa);
    weights.push_back(-b[i].m_minus * table.value_at(b[i].kappa, x_prime));
    top = std::max(top, nodes.back());
  }
  const std::size_t M = a.size() + b.size();
  if (M == 0) return out;
  for (double w : weights) magnitudes.push_back(std::abs(w));

  PronyOptions po = options.prony;
  po.node_scale = top;
  po.reference_moments = power_moments(nodes, magnitudes, 2 * M);
  out.residual = prony_recover(power_moments(nodes, weights, 2 * M), M, po);

  auto close = [&](double x, double y) { return std::abs(x - y) <= options.node_tolerance; };
  std::vector<bool> used(b.size(), false);
  for (std::size_t i : ia) {
    for (std::size_t j : ib) {
      if (used[j] || !close(a[i].kappa * a[i].kappa, b[j].kappa * b[j].kappa)) continue;
      used[j] = true;
      out.matched_pairs.emplace_back(i, j);
      break;
    }
  }
  for (double node : out.residual.nodes) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (close(node, a[i].kappa * a[i].kappa)) out.offending_a.push_back(i);
    for (std::size_t j = 0; j < b.size(); ++j)
      if (close(node, b[j].kappa * b[j].kappa)) out.offending_b.push_back(j);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool paired = std::any_of(out.matched_pairs.begin(), out.matched_pairs.end(),
                                    [&](const auto& p) { return p.first == i; });
    if (!paired) out.offending_a.push_back(i);
  }
  for (std::size_t j = 0; j < b.size(); ++j)
    if (!used[j]) out.offending_b.push_back(j);
  for (auto* v : {&out.offending_a, &out.offending_b}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  std::sort(out.matched_pairs.begin(), out.matched_pairs.end());
  out.mismatch = !out.residual.nodes.empty() || !out.offending_a.empty() || !out.offending_b.empty();
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json_value(const MomentReport& r) {
  nlohmann::json j;
  j["window"] = {r.window.a, r.window.b};
  j["l_max"] = r.l_max;
  j["C"] = r.C;
  j["max_deviation"] = r.max_deviation;
  j["residuals"] = r.residuals;
  j["product_identity"] = r.product_identity;
  j["derivative_identity"] = r.derivative_identity;
  return j;
}

inline nlohmann::json to_json_value(const PronyResult& r) {
  nlohmann::json j;
  j["nodes"] = r.nodes;
  j["weights"] = r.weights;
  j["matched_pairs"] = r.matched_pairs;
  j["dropped"] = r.dropped;
  j["rank"] = r.rank;
  j["singular_values"] = r.singular_values;
  return j;
}

inline nlohmann::json to_json_value(const MatchReport& r) {
  return {{"mismatch", r.mismatch},         {"x_prime", r.x_prime},         {"matched_pairs", r.matched_pairs},
          {"offending_a", r.offending_a},   {"offending_b", r.offending_b}, {"residual", to_json_value(r.residual)}};
}

inline nlohmann::json to_json_value(const WindowConstancy& w) {
  return {{"c0_moment", w.c0_moment},
          {"c0_integral", w.c0_integral},
          {"mismatch", w.mismatch},
          {"max_deviation", w.max_deviation}};
}

}  // namespace scatter1d
