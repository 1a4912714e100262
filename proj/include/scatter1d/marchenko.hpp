#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"
#include "scatter1d/jost.hpp"
#include "scatter1d/parallel.hpp"
#include "scatter1d/potential.hpp"

namespace scatter1d {

struct MarchenkoOptions {
  /// Fraction of the k-range, at the top, covered by the raised-cosine taper.
  double taper_fraction = 0.1;
  /// Largest accepted pivot-ratio condition estimate of the Nystrom system.
  double condition_limit = 1e12;
  IntegratorOptions integrator{};
};

/// Phi(x, y) on a grid, stored as the full symmetric matrix. `continuous` is the
/// reflection part alone (the bound-state sums are finite rank).
struct MarchenkoKernel {
  SpatialGrid grid;
  Eigen::MatrixXd phi;
  Eigen::MatrixXd continuous;
  Potential reference;
  ScatteringData reference_data;
};

/// Raised cosine on the top `fraction` of [0, k_max].
inline double taper(double k, double k_max, double fraction) {
  if (fraction <= 0) return 1.0;
  const double start = k_max * (1.0 - fraction);
  if (k <= start) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (k - start) / (k_max - start)));
}

/// Trapezoid weights with the taper folded in for the integral over [0, k_max] on the
/// positive k nodes. The k = 0 node is left out; it carries weight k_0 / 2 (see
/// `value_at_zero`).
inline std::vector<double> k_quadrature_weights(std::span<const double> k, double taper_fraction) {
  const std::size_t n = k.size();
  require(n >= 3, ErrorKind::InvalidArgument, "k grid needs at least three nodes");
  std::vector<double> w(n, 0.0);
  const double k_max = k.back();
  for (std::size_t j = 0; j < n; ++j) {
    const double left = j == 0 ? k[0] : k[j] - k[j - 1];
    const double right = j + 1 == n ? 0.0 : k[j + 1] - k[j];
    w[j] = 0.5 * (left + right) * taper(k[j], k_max, taper_fraction);
  }
  return w;
}

/// Quadratic extrapolation to k = 0 from the first three nodes.
template <class T>
T value_at_zero(std::span<const double> k, std::span<const T> f) {
  const double k1 = k[0], k2 = k[1], k3 = k[2];
  return f[0] * (k2 * k3 / ((k1 - k2) * (k1 - k3))) + f[1] * (k1 * k3 / ((k2 - k1) * (k2 - k3))) +
         f[2] * (k1 * k2 / ((k3 - k1) * (k3 - k2)));
}

/// Reflection part (1/pi) Re int_0^kmax [L - L~](k) f~_r(k,x) f~_r(k,y) dk. The k = 0
/// node uses L - L~ extrapolated to 0 and the zero-energy reference solution.
inline Eigen::MatrixXd continuous_kernel(std::span<const double> k, std::span<const cd> delta_L,
                                         const Potential& reference, const SpatialGrid& grid,
                                         const MarchenkoOptions& options) {
  const auto w = k_quadrature_weights(k, options.taper_fraction);
  const std::size_t n = grid.n;
  const std::size_t nk = k.size();
  std::vector<cd> c(nk);
  for (std::size_t j = 0; j < nk; ++j) c[j] = w[j] * delta_L[j] / std::numbers::pi;
  const double c0 = 0.5 * k[0] * value_at_zero(k, delta_L).real() / std::numbers::pi;

  Eigen::MatrixXd out(n, n);
  if (reference.is_zero()) {
    // f~_r = e^{-ikx}: the kernel depends on x + y only
    const double dx = grid.dx();
    std::vector<double> omega(2 * n - 1);
    parallel_for(omega.size(), [&](std::size_t m) {
      const double s = 2.0 * grid.x_min + dx * static_cast<double>(m);
      double acc = c0;
      for (std::size_t j = 0; j < nk; ++j) acc += (c[j] * std::exp(cd(0.0, -k[j] * s))).real();
      omega[m] = acc;
    });
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) out(i, l) = omega[i + l];
    return out;
  }

  Eigen::MatrixXd A(n, nk + 1), B(n, nk + 1);
  Propagator prop(reference, options.integrator);
  const auto xs = grid.points();
  parallel_for(nk + 1, [&](std::size_t j) {
    const auto states = jost_or_zero_mode_at(prop, j < nk ? k[j] : 0.0, Side::Right, grid, xs);
    for (std::size_t i = 0; i < n; ++i) {
      A(i, j) = states[i].y.real();
      B(i, j) = states[i].y.imag();
    }
  });
  // Re((A + iB) diag(c) (A + iB)^T) = U A^T - W B^T
  Eigen::VectorXd cr(nk + 1), ci(nk + 1);
  for (std::size_t j = 0; j < nk; ++j) {
    cr[j] = c[j].real();
    ci[j] = c[j].imag();
  }
  cr[nk] = c0;
  ci[nk] = 0.0;
  const Eigen::MatrixXd U = A * cr.asDiagonal() - B * ci.asDiagonal();
  const Eigen::MatrixXd W = A * ci.asDiagonal() + B * cr.asDiagonal();
  out.noalias() = U * A.transpose();
  out.noalias() -= W * B.transpose();
  return out;
}

/// f~_r(i kappa, x) for the reference on the grid. When i kappa is itself a bound
/// state of the reference the right half comes from the decaying left solution.
inline Eigen::VectorXd reference_bound_field(const Potential& reference, double kappa, const SpatialGrid& grid,
                                             const IntegratorOptions& options) {
  Eigen::VectorXd g(grid.n);
  if (reference.is_zero()) {
    for (std::size_t i = 0; i < grid.n; ++i) g[i] = std::exp(kappa * grid[i]);
    return g;
  }
  const BoundEigenfunction e = bound_eigenfunction(reference, kappa, grid, options);
  if (e.wronskian_relative < 1e-6) {
    for (std::size_t i = 0; i < grid.n; ++i) g[i] = e.values[i];
    return g;
  }
  const JostField f = solve_jost(reference, cd(0.0, kappa), Side::Right, grid, options);
  for (std::size_t i = 0; i < grid.n; ++i) {
    const double re = f.values[i].real();
    if (std::abs(f.values[i].imag()) > 1e-6 * std::max(std::abs(re), 1e-300))
      throw Error(ErrorKind::ImaginaryResidue, "bound-state Jost field is not real");
    g[i] = re;
  }
  return g;
}

/// Kernel of the Marchenko equation for `data` relative to the reference potential.
inline MarchenkoKernel build_phi(const ScatteringData& data, const Potential& reference,
                                 const ScatteringData& reference_data, const SpatialGrid& grid,
                                 const MarchenkoOptions& options = {}) {
  const auto& k = data.coefficients.k;
  const auto& k_ref = reference_data.coefficients.k;
  require(k.size() == k_ref.size(), ErrorKind::KGridMismatch, "data and reference use different k grids");
  for (std::size_t j = 0; j < k.size(); ++j)
    require(std::abs(k[j] - k_ref[j]) <= 1e-12 * std::max(1.0, std::abs(k[j])), ErrorKind::KGridMismatch,
            "data and reference use different k grids");
  for (const auto& b : data.bound_states)
    require(b.kappa > 0 && b.m_minus > 0, ErrorKind::InvalidArgument,
            "bound-state data must have kappa > 0 and m- > 0");

  std::vector<cd> delta(k.size());
  for (std::size_t j = 0; j < k.size(); ++j) delta[j] = data.coefficients.L[j] - reference_data.coefficients.L[j];

  MarchenkoKernel kernel{grid, {}, continuous_kernel(k, delta, reference, grid, options), reference, reference_data};
  kernel.phi = kernel.continuous;
  for (const auto& b : data.bound_states) {
    const Eigen::VectorXd g = reference_bound_field(reference, b.kappa, grid, options.integrator);
    kernel.phi.noalias() += b.m_minus * g * g.transpose();
  }
  for (const auto& b : reference_data.bound_states) {
    const Eigen::VectorXd g = reference_bound_field(reference, b.kappa, grid, options.integrator);
    kernel.phi.noalias() -= b.m_minus * g * g.transpose();
  }
  return kernel;
}

// ---------------------------------------------------------------------------
// Nystrom system and its factorization

/// Trapezoid Nystrom weights sqrt'd into a symmetric form: S = I + D^{1/2} Phi D^{1/2}
/// with D = dx diag(1/2, 1, 1, ...). The leading (n+1) x (n+1) block of S is the
/// system at x = x_n up to the final-node weight, which is corrected analytically.
inline Eigen::MatrixXd nystrom_matrix(const Eigen::MatrixXd& phi, double dx, std::size_t rows) {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(rows), std::sqrt(dx));
  s[0] = std::sqrt(0.5 * dx);
  const auto r = static_cast<Eigen::Index>(rows);
  Eigen::MatrixXd S = s.asDiagonal() * phi.topLeftCorner(r, r) * s.asDiagonal();
  S.diagonal().array() += 1.0;
  return S;
}

/// S = L diag(d) L^T without pivoting, so leading blocks factor leading blocks.
struct LdltFactor {
  Eigen::MatrixXd L;
  Eigen::VectorXd d;
};

inline LdltFactor ldlt_unpivoted(const Eigen::MatrixXd& S) {
  const Eigen::Index n = S.rows();
  LdltFactor f{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  Eigen::VectorXd work(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j > 0) {
      work.head(j) = f.L.row(j).head(j).transpose().cwiseProduct(f.d.head(j));
      f.d[j] = S(j, j) - f.L.row(j).head(j).dot(work.head(j));
    } else {
      f.d[j] = S(j, j);
    }
    f.L(j, j) = 1.0;
    if (!(std::abs(f.d[j]) > 0) || !std::isfinite(f.d[j]))
      throw Error(ErrorKind::SingularFredholm, "zero pivot in the Nystrom system at node " + std::to_string(j));
    const Eigen::Index rest = n - j - 1;
    if (rest > 0) {
      Eigen::VectorXd col = S.col(j).tail(rest);
      if (j > 0) col.noalias() -= f.L.bottomLeftCorner(rest, j) * work.head(j);
      f.L.col(j).tail(rest) = col / f.d[j];
    }
  }
  return f;
}

/// B(x_n, x_n) from the pivots: -(2/dx)(d_n - 1)/(d_n + 1), and -Phi(x_0, x_0) at the first node.
inline std::vector<double> diagonal_from_pivots(const Eigen::VectorXd& d, double dx, double phi00) {
  std::vector<double> b(static_cast<std::size_t>(d.size()));
  b[0] = -phi00;
  for (Eigen::Index n = 1; n < d.size(); ++n) {
    if (std::abs(d[n] + 1.0) < 1e-12)
      throw Error(ErrorKind::SingularFredholm, "Nystrom system is singular at node " + std::to_string(n));
    b[static_cast<std::size_t>(n)] = -(2.0 / dx) * (d[n] - 1.0) / (d[n] + 1.0);
  }
  return b;
}

/// Pivot-ratio estimate of the condition of the factored system.
inline double pivot_condition(const Eigen::VectorXd& d) {
  const double lo = d.cwiseAbs().minCoeff();
  const double hi = std::max(1.0, d.cwiseAbs().maxCoeff());
  return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

/// B(x, y) on {y <= x}; row n holds B(x_n, y_i) for i <= n.
struct BField {
  SpatialGrid grid;
  Eigen::MatrixXd b;
  std::vector<double> diagonal;
};

/// Factorizes the Nystrom discretization of
///   B(x,y) + Phi(x,y) + int_{x_min}^{x} B(x,t) Phi(t,y) dt = 0
/// once for all x on the kernel grid.
class MarchenkoSolver {
 public:
  MarchenkoSolver(const MarchenkoKernel& kernel, const MarchenkoOptions& options = {})
      : grid_(kernel.grid), dx_(kernel.grid.dx()) {
    factor_ = ldlt_unpivoted(nystrom_matrix(kernel.phi, dx_, grid_.n));
    condition_ = pivot_condition(factor_.d);
    if (condition_ > options.condition_limit)
      throw Error(ErrorKind::SingularFredholm,
                  "Nystrom condition estimate " + std::to_string(condition_) + " exceeds the limit");
    diagonal_ = diagonal_from_pivots(factor_.d, dx_, kernel.phi(0, 0));
  }

  const SpatialGrid& grid() const { return grid_; }
  const std::vector<double>& diagonal() const { return diagonal_; }
  double condition_estimate() const { return condition_; }
  const LdltFactor& factor() const { return factor_; }

  /// B(x_n, y_i), i = 0..n.
  std::vector<double> row(std::size_t n) const {
    std::vector<double> out(n + 1);
    if (n == 0) {
      out[0] = diagonal_[0];
      return out;
    }
    const auto m = static_cast<Eigen::Index>(n + 1);
    // r = (row n of L^{-1})^T solves L^T r = e_n on the leading block
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    r[m - 1] = 1.0;
    factor_.L.topLeftCorner(m, m).transpose().triangularView<Eigen::UnitUpper>().solveInPlace(r);
    fill_row(n, r, out);
    return out;
  }

  BField field() const {
    const auto n = static_cast<Eigen::Index>(grid_.n);
    Eigen::MatrixXd Linv = Eigen::MatrixXd::Identity(n, n);
    factor_.L.triangularView<Eigen::UnitLower>().solveInPlace(Linv);
    BField f{grid_, Eigen::MatrixXd::Zero(n, n), diagonal_};
    f.b(0, 0) = diagonal_[0];
    std::vector<double> out;
    for (std::size_t i = 1; i < grid_.n; ++i) {
      out.assign(i + 1, 0.0);
      const Eigen::VectorXd r = Linv.row(static_cast<Eigen::Index>(i)).head(static_cast<Eigen::Index>(i + 1)).transpose();
      fill_row(i, r, out);
      for (std::size_t j = 0; j <= i; ++j) f.b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = out[j];
    }
    return f;
  }

 private:
  // z_j = (delta_jn - r_j / d_n) / sqrt(D_jj D_nn), B = -z / (1 - dx z_n / 2)
  void fill_row(std::size_t n, const Eigen::VectorXd& r, std::vector<double>& out) const {
    const double dn = factor_.d[static_cast<Eigen::Index>(n)];
    const double zn = (1.0 - 1.0 / dn) / dx_;
    const double scale = -1.0 / (1.0 - 0.5 * dx_ * zn);
    for (std::size_t j = 0; j <= n; ++j) {
      const double Djj = j == 0 ? 0.5 * dx_ : dx_;
      const double delta = j == n ? 1.0 : 0.0;
      const double z = (delta - r[static_cast<Eigen::Index>(j)] / dn) / std::sqrt(Djj * dx_);
      out[j] = scale * z;
    }
  }

  SpatialGrid grid_;
  double dx_;
  LdltFactor factor_;
  double condition_ = 1.0;
  std::vector<double> diagonal_;
};

/// B(x, y) for y in [x_min, x], x a node of the kernel grid.
inline std::vector<double> solve_b(const MarchenkoKernel& kernel, double x, const MarchenkoOptions& options = {}) {
  require(x > kernel.grid.x_min && x <= kernel.grid.x_max + 1e-12, ErrorKind::InvalidArgument,
          "x must lie in (x_min, x_max]");
  const std::size_t n = kernel.grid.nearest(x);
  require(std::abs(kernel.grid[n] - x) < 1e-9 * std::max(1.0, std::abs(x)), ErrorKind::InvalidArgument,
          "x must be a node of the kernel grid");
  MarchenkoKernel leading{SpatialGrid(kernel.grid.x_min, kernel.grid[n], n + 1),
                          kernel.phi.topLeftCorner(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n + 1)),
                          {}, kernel.reference, kernel.reference_data};
  return MarchenkoSolver(leading, options).row(n);
}

// ---------------------------------------------------------------------------
// Potential from the diagonal

/// d/dx of a grid function: fourth-order central differences, falling back to
/// second-order one-sided differences whose stencil avoids the given breakpoints.
inline std::vector<double> differentiate(const SpatialGrid& grid, std::span<const double> f,
                                         std::span<const double> breakpoints) {
  const std::size_t n = grid.n;
  const double dx = grid.dx();
  std::vector<double> out(n, 0.0);
  auto crosses = [&](std::size_t lo, std::size_t hi) {
    // a breakpoint strictly inside (x_lo, x_hi)
    const double a = grid[lo], b = grid[hi];
    auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), a + 1e-12 * std::max(1.0, std::abs(a)));
    return it != breakpoints.end() && *it < b - 1e-12 * std::max(1.0, std::abs(b));
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= 2 && i + 2 < n && !crosses(i - 2, i + 2)) {
      out[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * dx);
    } else if (i + 2 < n && !crosses(i, i + 2)) {
      out[i] = (-3.0 * f[i] + 4.0 * f[i + 1] - f[i + 2]) / (2.0 * dx);
    } else if (i >= 2 && !crosses(i - 2, i)) {
      out[i] = (3.0 * f[i] - 4.0 * f[i - 1] + f[i - 2]) / (2.0 * dx);
    } else if (i + 1 < n) {
      out[i] = (f[i + 1] - f[i]) / dx;
    } else {
      out[i] = (f[i] - f[i - 1]) / dx;
    }
  }
  return out;
}

/// A potential recovered on a grid.
struct RecoveredPotential {
  SpatialGrid grid;
  std::vector<double> values;

  Potential as_potential(std::vector<double> jumps = {}) const { return Potential::sampled(grid, values, std::move(jumps)); }
};

/// V(x) = V~(x) + 2 d/dx B(x, x).
inline RecoveredPotential potential_from_diagonal(const SpatialGrid& grid, std::span<const double> diagonal,
                                                  const Potential& reference) {
  const auto& bp = reference.jump_candidates();
  const auto slope = differentiate(grid, diagonal, bp);
  RecoveredPotential out{grid, std::vector<double>(grid.n)};
  for (std::size_t i = 0; i < grid.n; ++i) out.values[i] = reference(grid[i]) + 2.0 * slope[i];
  return out;
}

inline RecoveredPotential recover_potential(const MarchenkoKernel& kernel, const MarchenkoOptions& options = {}) {
  MarchenkoSolver solver(kernel, options);
  return potential_from_diagonal(kernel.grid, solver.diagonal(), kernel.reference);
}

/// sup_x | f_r(k,x) - f~_r(k,x) - int_{x_min}^{x} B(x,t) f~_r(k,t) dt |, with f_r the
/// right Jost solution of the recovered potential (computed independently).
inline double transformation_residual(const MarchenkoKernel& kernel, const BField& field, const Potential& recovered,
                                      double k, const IntegratorOptions& options = {}) {
  const SpatialGrid& grid = kernel.grid;
  const JostField fr = solve_jost(recovered, k, Side::Right, grid, options);
  const JostField ref = solve_jost(kernel.reference, k, Side::Right, grid, options);
  const double dx = grid.dx();
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.n; ++i) {
    cd integral = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      const double w = (j == 0 || j == i) ? 0.5 * dx : dx;
      integral += w * field.b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * ref.values[j];
    }
    if (i == 0) integral = 0.0;
    worst = std::max(worst, std::abs(fr.values[i] - ref.values[i] - integral));
  }
  return worst;
}

/// max | B_xx - B_yy - (V(x) - V~(y)) B | over interior triangle points whose
/// stencils avoid jump candidates of either potential, optionally restricted to a box.
inline double pde_residual(const BField& field, const Potential& v, const Potential& reference,
                           std::optional<Window> region = std::nullopt) {
  const SpatialGrid& g = field.grid;
  const double dx = g.dx();
  std::vector<double> bp = v.jump_candidates();
  bp.insert(bp.end(), reference.jump_candidates().begin(), reference.jump_candidates().end());
  std::sort(bp.begin(), bp.end());
  auto near_break = [&](double x) {
    auto it = std::lower_bound(bp.begin(), bp.end(), x - dx * 1.000001);
    return it != bp.end() && *it <= x + dx * 1.000001;
  };
  auto inside = [&](double x) { return !region || region->contains(x); };
  double worst = 0.0;
  const auto& B = field.b;
  for (std::size_t i = 2; i + 1 < g.n; ++i) {
    const double x = g[i];
    if (!inside(x) || near_break(x)) continue;
    const double vx = v(x);
    for (std::size_t j = 1; j + 1 <= i - 1; ++j) {
      const double y = g[j];
      if (!inside(y) || near_break(y)) continue;
      const auto I_ = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
      const double bxx = (B(I_ + 1, J) - 2.0 * B(I_, J) + B(I_ - 1, J)) / (dx * dx);
      const double byy = (B(I_, J + 1) - 2.0 * B(I_, J) + B(I_, J - 1)) / (dx * dx);
      worst = std::max(worst, std::abs(bxx - byy - (vx - reference(y)) * B(I_, J)));
    }
  }
  return worst;
}

/// Scattering data -> potential on `grid`, relative to the reference.
inline RecoveredPotential reconstruct(const ScatteringData& data, const Potential& reference,
                                      const ScatteringData& reference_data, const SpatialGrid& grid,
                                      const MarchenkoOptions& options = {}) {
  return recover_potential(build_phi(data, reference, reference_data, grid, options), options);
}

/// Scattering data of the zero potential on a k grid.
inline ScatteringData zero_data(std::span<const double> k) {
  ScatteringData d;
  d.coefficients.k.assign(k.begin(), k.end());
  d.coefficients.T.assign(k.size(), cd(1.0, 0.0));
  d.coefficients.T_right = d.coefficients.T;
  d.coefficients.L.assign(k.size(), cd(0.0, 0.0));
  d.coefficients.R.assign(k.size(), cd(0.0, 0.0));
  return d;
}

/// Triangle export: one (x, y, value) line per stored point with y <= x.
inline void write_triangle_csv(const std::string& path, const SpatialGrid& grid, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot open " + path);
  out.precision(17);
  out << "x,y,value\n";
  for (std::size_t i = 0; i < grid.n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      out << grid[i] << "," << grid[j] << "," << m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << "\n";
}

}  // namespace scatter1d
