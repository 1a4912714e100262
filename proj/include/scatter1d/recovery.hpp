#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"
#include "scatter1d/jost.hpp"
#include "scatter1d/marchenko.hpp"
#include "scatter1d/moments.hpp"
#include "scatter1d/parallel.hpp"
#include "scatter1d/potential.hpp"

namespace scatter1d {

struct SearchBox {
  std::size_t n_max = 5;
  double kappa_min = 0.2, kappa_max = 3.0;
  double m_min = 0.05, m_max = 20.0;
};

/// Left reflection coefficient plus the potential on a window; the bound-state
/// data are unknown.
struct RecoveryProblem {
  std::vector<double> k;
  std::vector<cd> L;
  Window window{0.0, 1.0};
  /// Potential on the window nodes of `grid`.
  std::vector<double> v_window;
  /// Known jump positions inside the window; their neighbourhoods are left out
  /// of the residual.
  std::vector<double> window_jumps;
  bool window_non_ac = false;
  SearchBox box{};
  std::optional<double> objective_tolerance;
  /// Marchenko grid; its nodes inside the window carry v_window.
  SpatialGrid grid{-20.0, 2.0, 1101};
  double jump_exclusion = 0.15;
  std::size_t starts = 16;
  std::uint64_t seed = 20240917;

  SpatialGrid window_grid() const { return grid.restrict_to(window.a, window.b); }

  void validate() const {
    require(k.size() == L.size() && k.size() >= 3, ErrorKind::InvalidArgument, "L must be sampled on the k grid");
    require(window.a >= grid.x_min + 1.0 && window.b <= grid.x_max - 1.0, ErrorKind::InvalidArgument,
            "window must lie inside the grid with margin 1");
    require(v_window.size() == window_grid().n, ErrorKind::InvalidArgument, "window values must match window nodes");
    require(box.n_max <= 5, ErrorKind::InvalidArgument, "N_max is at most 5");
    require(box.kappa_min > 0 && box.kappa_min < box.kappa_max && box.m_min > 0 && box.m_min < box.m_max,
            ErrorKind::InvalidArgument, "search box must be positive and non-empty");
    require(starts >= 1, ErrorKind::InvalidArgument, "at least one start");
  }
};

/// Default Marchenko grid for a window: spacing 0.02 from -20 to two units past the window.
inline SpatialGrid recovery_grid(Window w, double dx = 0.02, double x_min = -20.0) {
  return SpatialGrid::with_spacing(x_min, std::max(w.b + 2.0, x_min + 4.0), dx);
}

/// Problem built from a known potential: L from the forward solver, V sampled on the window.
inline RecoveryProblem make_problem(const Potential& truth, Window window, std::span<const double> k_grid,
                                    const SpatialGrid& line = {}, SearchBox box = {},
                                    std::optional<SpatialGrid> grid = std::nullopt) {
  RecoveryProblem p;
  p.k.assign(k_grid.begin(), k_grid.end());
  p.L = scattering_coefficients(truth, k_grid, line).L;
  p.window = window;
  p.grid = grid ? *grid : recovery_grid(window);
  p.window_jumps = jumps_inside(truth, window);
  p.window_non_ac = !p.window_jumps.empty();
  p.box = box;
  p.jump_exclusion = 1.5 * std::numbers::pi / k_grid.back();
  p.v_window = sample(truth, p.window_grid());
  p.validate();
  return p;
}

/// Trapezoid weights on the window nodes with the jump neighbourhoods removed.
inline std::vector<double> residual_weights(const RecoveryProblem& p) {
  const SpatialGrid w = p.window_grid();
  std::vector<double> out(w.n, 0.0);
  const double h = w.dx();
  for (std::size_t i = 0; i + 1 < w.n; ++i) {
    bool clear = true;
    for (double x : p.window_jumps)
      if (std::abs(w[i] - x) < p.jump_exclusion || std::abs(w[i + 1] - x) < p.jump_exclusion) clear = false;
    if (!clear) continue;
    out[i] += 0.5 * h;
    out[i + 1] += 0.5 * h;
  }
  return out;
}

/// Full-line potential with left reflection L and bound data (kappa_j, m-_j), via the
/// Marchenko equation with the zero reference.
inline RecoveredPotential forward_map(std::span<const double> k, std::span<const cd> L,
                                      std::span<const double> kappas, std::span<const double> ms,
                                      const SpatialGrid& grid, const MarchenkoOptions& options = {}) {
  require(kappas.size() == ms.size(), ErrorKind::InvalidArgument, "one norming constant per kappa");
  ScatteringData d = zero_data(k);
  d.coefficients.L.assign(L.begin(), L.end());
  for (std::size_t j = 0; j < kappas.size(); ++j) d.bound_states.push_back({kappas[j], ms[j], 0.0});
  return reconstruct(d, Potential::zero(), zero_data(k), grid, options);
}

/// Jump of the window samples at x: linear extrapolation from the two nodes on each side
/// (samples are right-continuous, so the node at x belongs to the right side).
inline double sampled_jump(const SpatialGrid& w, std::span<const double> v, double x) {
  const double h = w.dx();
  const auto right = static_cast<std::size_t>(std::ceil((x - w.x_min) / h - 1e-9));
  require(right >= 2 && right + 1 < w.n, ErrorKind::InvalidArgument, "jump too close to the window edge");
  const double left_value = v[right - 1] + (v[right - 1] - v[right - 2]) * (x - w[right - 1]) / h;
  const double right_value = v[right] + (v[right] - v[right + 1]) * (w[right] - x) / h;
  return right_value - left_value;
}

/// V_window as the band-limited pipeline sees it: every known window jump J at x_j
/// is replaced by J times the step response of the tapered k-quadrature,
///   S(x) = 1/2 + (1/pi) sum_j w_j sin(2 k_j x) / k_j, with the k = 0 node worth k_0 x / pi.
inline std::vector<double> band_limited_window(const RecoveryProblem& p, double taper_fraction = 0.1) {
  const SpatialGrid w = p.window_grid();
  std::vector<double> out = p.v_window;
  if (p.window_jumps.empty()) return out;
  const auto weights = k_quadrature_weights(p.k, taper_fraction);
  auto step = [&](double x) {
    double s = 0.5 + p.k[0] * x / std::numbers::pi;
    for (std::size_t j = 0; j < p.k.size(); ++j) s += weights[j] * std::sin(2.0 * p.k[j] * x) / (p.k[j] * std::numbers::pi);
    return s;
  };
  for (double xj : p.window_jumps) {
    const double J = sampled_jump(w, p.v_window, xj);
    for (std::size_t i = 0; i < w.n; ++i) out[i] += J * (step(w[i] - xj) - (w[i] >= xj ? 1.0 : 0.0));
  }
  return out;
}

/// L1 distance over the window between a candidate on the problem grid and the band-limited V_window.
inline double window_residual(const RecoveredPotential& candidate, const RecoveryProblem& p) {
  const SpatialGrid w = p.window_grid();
  const auto weights = residual_weights(p);
  const std::size_t first = candidate.grid.nearest(w.x_min);
  require(candidate.grid.dx() == p.grid.dx() && std::abs(candidate.grid[first] - w.x_min) < 1e-9,
          ErrorKind::InvalidArgument, "candidate must live on the problem grid");
  const auto target = band_limited_window(p);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.n; ++i) acc += weights[i] * std::abs(candidate.values[first + i] - target[i]);
  return acc;
}

/// window_residual(forward_map(L, kappas, ms)) restricted to what the window needs:
/// the reflection part of the Nystrom system is factored once, each bound-state set
/// updates the pivots through the determinant lemma.
class WindowObjective {
 public:
  explicit WindowObjective(const RecoveryProblem& p, const MarchenkoOptions& options = {}) {
    p.validate();
    const SpatialGrid w = p.window_grid();
    first_ = p.grid.nearest(w.x_min);
    count_ = w.n;
    rows_ = std::min(p.grid.n, first_ + count_ + 2);
    grid_ = SpatialGrid(p.grid.x_min, p.grid[rows_ - 1], rows_);
    dx_ = grid_.dx();
    std::vector<cd> delta(p.L.begin(), p.L.end());
    const Eigen::MatrixXd phi = continuous_kernel(p.k, delta, Potential::zero(), grid_, options);
    phi00_ = phi(0, 0);
    factor_ = ldlt_unpivoted(nystrom_matrix(phi, dx_, rows_));
    sqrt_w_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(rows_), std::sqrt(dx_));
    sqrt_w_[0] = std::sqrt(0.5 * dx_);
    weights_ = residual_weights(p);
    target_ = band_limited_window(p, options.taper_fraction);
  }

  /// L1 distance on the window; +infinity when the data are inadmissible.
  double operator()(std::span<const double> kappas, std::span<const double> ms) const {
    const auto v = window_values(kappas, ms);
    if (v.empty()) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t i = 0; i < count_; ++i) acc += weights_[i] * std::abs(v[i] - target_[i]);
    return acc;
  }

  /// sqrt(w_i) (V(x_i) - target_i); empty when inadmissible.
  std::vector<double> misfit(std::span<const double> kappas, std::span<const double> ms) const {
    auto v = window_values(kappas, ms);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(weights_[i]) * (v[i] - target_[i]);
    return v;
  }

  /// Recovered potential at the window nodes.
  std::vector<double> window_values(std::span<const double> kappas, std::span<const double> ms) const {
    const auto diag = diagonal(kappas, ms);
    if (diag.empty()) return {};
    std::vector<double> v(count_);
    for (std::size_t i = 0; i < count_; ++i) {
      const std::size_t n = first_ + i;
      const double slope = n >= 2 && n + 2 < rows_
                               ? (-diag[n + 2] + 8.0 * diag[n + 1] - 8.0 * diag[n - 1] + diag[n - 2]) / (12.0 * dx_)
                               : (-3.0 * diag[n] + 4.0 * diag[n + 1] - diag[n + 2]) / (2.0 * dx_);
      v[i] = 2.0 * slope;
    }
    return v;
  }

  /// B(x_n, x_n) for the leading rows; empty if inadmissible.
  std::vector<double> diagonal(std::span<const double> kappas, std::span<const double> ms) const {
    const std::size_t N = kappas.size();
    for (std::size_t j = 0; j < N; ++j)
      if (!(kappas[j] > 0) || !(ms[j] > 0)) return {};
    const auto R = static_cast<Eigen::Index>(rows_);
    Eigen::VectorXd d = factor_.d;
    double phi00 = phi00_;
    if (N > 0) {
      const auto n = static_cast<Eigen::Index>(N);
      Eigen::MatrixXd H(R, n);
      for (Eigen::Index i = 0; i < R; ++i)
        for (Eigen::Index j = 0; j < n; ++j) H(i, j) = sqrt_w_[i] * std::exp(kappas[j] * grid_[i]);
      for (std::size_t j = 0; j < N; ++j) phi00 += ms[j] * std::exp(2.0 * kappas[j] * grid_.x_min);
      factor_.L.triangularView<Eigen::UnitLower>().solveInPlace(H);
      // d_new = d + y^T (M^{-1} + sum_{i<n} y_i y_i^T / d_i)^{-1} y
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index j = 0; j < n; ++j) K(j, j) = 1.0 / ms[j];
      for (Eigen::Index i = 0; i < R; ++i) {
        const Eigen::VectorXd y = H.row(i).transpose();
        d[i] = factor_.d[i] + y.dot(K.ldlt().solve(y));
        K.noalias() += y * y.transpose() / factor_.d[i];
      }
    }
    for (Eigen::Index i = 0; i < R; ++i)
      if (!(d[i] > 0) || !std::isfinite(d[i])) return {};
    try {
      return diagonal_from_pivots(d, dx_, phi00);
    } catch (const Error&) {
      return {};
    }
  }

  const SpatialGrid& grid() const { return grid_; }
  const std::vector<double>& target() const { return target_; }

 private:
  SpatialGrid grid_;
  std::size_t first_ = 0, count_ = 0, rows_ = 0;
  double dx_ = 0.0, phi00_ = 0.0;
  LdltFactor factor_;
  Eigen::VectorXd sqrt_w_;
  std::vector<double> weights_, target_;
};

// ---------------------------------------------------------------------------
// Search

/// Where a local search ended. Only interior minima are local minima of the
/// objective; a boundary point is held by the search box (the misfit keeps falling
/// outward, e.g. toward m -> 0, which is the data set with one state fewer). Ordered from most to
/// least conclusive; duplicates keep the best end.
enum class EndPoint { Interior, Boundary, Budget };

inline std::string_view to_string(EndPoint e) {
  switch (e) {
    case EndPoint::Interior: return "interior";
    case EndPoint::Boundary: return "boundary";
    case EndPoint::Budget: return "budget";
  }
  return "?";
}

struct Candidate {
  std::vector<double> kappas;
  std::vector<double> m_minus;
  double residual = std::numeric_limits<double>::infinity();
  /// Full-line potential on the problem grid (filled for the leading candidates).
  std::optional<RecoveredPotential> potential;
  EndPoint end = EndPoint::Interior;

  std::size_t N() const { return kappas.size(); }
};

enum class Verdict { Unique, DoubleNonunique, Inconclusive };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Unique: return "Unique";
    case Verdict::DoubleNonunique: return "DoubleNonunique";
    case Verdict::Inconclusive: return "Inconclusive";
  }
  return "?";
}

struct RecoveryResult {
  std::vector<Candidate> candidates;
  Verdict verdict = Verdict::Inconclusive;
  double objective_tolerance = 0.0;
  bool window_non_ac = false;
  bool theorem_violation_suspected = false;
  std::size_t evaluations = 0;

  /// The lowest interior minimum (a search always ends with at least one).
  const Candidate& best() const {
    const auto it = std::find_if(candidates.begin(), candidates.end(),
                                 [](const Candidate& c) { return c.end == EndPoint::Interior; });
    require(it != candidates.end(), ErrorKind::SearchBudgetExhausted, "no interior local minimum");
    return *it;
  }
};

struct SearchOptions {
  /// Stop a start when every step (in log units) is below this.
  double step_tolerance = 1e-9;
  /// Stop when an accepted step lowers the squared misfit by less than this fraction.
  double cost_tolerance = 1e-10;
  double difference_step = 1e-6;
  std::size_t max_iterations = 200;
  /// Distance (log units) from a box face at which a coordinate counts as on it.
  double boundary_tolerance = 1e-6;
  /// Per start.
  std::size_t max_evaluations = 4000;
  /// Candidates closer than this (relative, in kappa and m) are the same.
  double dedupe_tolerance = 1e-3;
  /// Bound states closer than this in kappa are merged (their m add up).
  double merge_tolerance = 1e-3;
  /// Multiple of the best residual used when the problem has no tolerance.
  double floor_factor = 5.0;
  /// Golden-section steps polishing each local minimum of a sweep.
  int sweep_polish_iterations = 40;
  /// Leading candidates for which the full-line potential is computed.
  std::size_t keep_potentials = 8;
  MarchenkoOptions marchenko{};
};

/// Merge coincident kappas (summing m) and sort ascending.
inline Candidate canonical(Candidate c, double merge_tolerance) {
  std::vector<std::size_t> idx(c.N());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return c.kappas[a] < c.kappas[b]; });
  Candidate out{{}, {}, c.residual, std::move(c.potential), c.end};
  for (std::size_t i : idx) {
    if (!out.kappas.empty() && std::abs(c.kappas[i] - out.kappas.back()) <= merge_tolerance * c.kappas[i]) {
      const double m = out.m_minus.back() + c.m_minus[i];
      out.kappas.back() = (out.kappas.back() * out.m_minus.back() + c.kappas[i] * c.m_minus[i]) / m;
      out.m_minus.back() = m;
      continue;
    }
    out.kappas.push_back(c.kappas[i]);
    out.m_minus.push_back(c.m_minus[i]);
  }
  return out;
}

namespace detail {

struct StartResult {
  std::vector<double> point;
  double value;
  std::size_t evaluations;
  EndPoint end;
};

/// Levenberg-Marquardt on a residual vector inside a box. Coordinates sitting on a
/// face whose descent direction points out of the box are held fixed for the step
/// (projected LM); the Jacobian is by forward differences. An empty residual marks an
/// inadmissible point.
template <class F>
StartResult levenberg_marquardt(F&& residual, std::vector<double> x, std::span<const double> lo,
                                std::span<const double> hi, const SearchOptions& options) {
  const auto dim = static_cast<Eigen::Index>(x.size());
  auto cost_of = [](const std::vector<double>& r) {
    if (r.empty()) return std::numeric_limits<double>::infinity();
    double c = 0.0;
    for (double v : r) c += v * v;
    return c;
  };
  std::size_t evals = 0;
  auto jacobian = [&](const std::vector<double>& at, const std::vector<double>& r) {
    Eigen::MatrixXd J(static_cast<Eigen::Index>(r.size()), dim);
    for (Eigen::Index d = 0; d < dim; ++d) {
      std::vector<double> y = at;
      double h = options.difference_step;
      if (y[d] + h > hi[d]) h = -h;
      y[d] += h;
      const auto ry = residual(y);
      ++evals;
      if (ry.size() != r.size()) return Eigen::MatrixXd();
      for (std::size_t i = 0; i < r.size(); ++i) J(static_cast<Eigen::Index>(i), d) = (ry[i] - r[i]) / h;
    }
    return J;
  };
  auto held = [&](const std::vector<double>& at, const Eigen::VectorXd& g, Eigen::Index d) {
    return (at[d] <= lo[d] + options.boundary_tolerance && g[d] > 0) ||
           (at[d] >= hi[d] - options.boundary_tolerance && g[d] < 0);
  };

  std::vector<double> r = residual(x);
  ++evals;
  double cost = cost_of(r);
  if (!std::isfinite(cost)) return {std::move(x), cost, evals, EndPoint::Budget};
  Eigen::MatrixXd J = jacobian(x, r);
  if (J.size() == 0) return {std::move(x), cost, evals, EndPoint::Budget};
  double lambda = 1e-3;
  bool converged = false;
  Eigen::VectorXd g;
  std::vector<Eigen::Index> free;
  for (std::size_t it = 0; it < options.max_iterations && evals < options.max_evaluations; ++it) {
    g = J.transpose() * Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    free.clear();
    for (Eigen::Index d = 0; d < dim; ++d)
      if (!held(x, g, d)) free.push_back(d);
    if (free.empty()) {
      converged = true;
      break;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd Jf(J.rows(), nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      Jf.col(a) = J.col(free[a]);
      gf[a] = g[free[a]];
    }
    const Eigen::MatrixXd A = Jf.transpose() * Jf;
    bool improved = false, small = false;
    while (evals < options.max_evaluations) {
      if (lambda > 1e12) {
        small = true;
        break;
      }
      Eigen::MatrixXd Ad = A;
      for (Eigen::Index a = 0; a < nf; ++a) Ad(a, a) += lambda * std::max(A(a, a), 1e-12);
      const Eigen::VectorXd step = Ad.ldlt().solve(-gf);
      std::vector<double> y = x;
      double largest = 0.0;
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index d = free[a];
        y[d] = std::clamp(x[d] + step[a], lo[d], hi[d]);
        largest = std::max(largest, std::abs(y[d] - x[d]));
      }
      if (largest < options.step_tolerance) {
        small = true;
        break;
      }
      auto ry = residual(y);
      ++evals;
      const double cy = cost_of(ry);
      if (cy < cost) {
        small = (cost - cy) < options.cost_tolerance * cost;
        x = std::move(y);
        r = std::move(ry);
        cost = cy;
        lambda = std::max(lambda / 3.0, 1e-12);
        improved = true;
        break;
      }
      lambda *= 4.0;
    }
    if (improved) {
      J = jacobian(x, r);
      if (J.size() == 0) break;
    }
    if (small) {
      converged = true;
      break;
    }
    if (!improved) break;
  }
  if (!converged || J.size() == 0) return {std::move(x), cost, evals, EndPoint::Budget};
  g = J.transpose() * Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  for (Eigen::Index d = 0; d < dim; ++d)
    if (held(x, g, d)) return {std::move(x), cost, evals, EndPoint::Boundary};
  return {std::move(x), cost, evals, EndPoint::Interior};
}

}  // namespace detail

/// Deterministic Latin-hypercube points in [lo, hi]^dim.
inline std::vector<std::vector<double>> latin_hypercube(std::size_t count, std::span<const double> lo,
                                                        std::span<const double> hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts(count, std::vector<double>(lo.size()));
  for (std::size_t d = 0; d < lo.size(); ++d) {
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t s = 0; s < count; ++s)
      pts[s][d] = lo[d] + (hi[d] - lo[d]) * (static_cast<double>(perm[s]) + u(rng)) / static_cast<double>(count);
  }
  return pts;
}

/// Counts interior minima only; boundary and budget end points are not minima.
inline Verdict verdict_for(std::span<const Candidate> sorted, double tol) {
  std::size_t below = 0;
  bool separated = true;
  for (const auto& c : sorted) {
    if (c.end != EndPoint::Interior) continue;
    if (c.residual < tol)
      ++below;
    else if (c.residual <= 10.0 * tol)
      separated = false;
  }
  if (below == 1 && separated) return Verdict::Unique;
  if (below == 2 && separated) return Verdict::DoubleNonunique;
  return Verdict::Inconclusive;
}

/// Multistart search over N = 0..N_max bound states for data reproducing V on the window.
inline RecoveryResult recover_bound_data(const RecoveryProblem& p, const SearchOptions& options = {}) {
  p.validate();
  const WindowObjective objective(p, options.marchenko);
  const double lk0 = std::log(p.box.kappa_min), lk1 = std::log(p.box.kappa_max);
  const double lm0 = std::log(p.box.m_min), lm1 = std::log(p.box.m_max);

  struct Task {
    std::size_t N;
    std::vector<double> start;
  };
  std::vector<Task> tasks{{0, {}}};
  for (std::size_t N = 1; N <= p.box.n_max; ++N) {
    std::vector<double> lo(2 * N), hi(2 * N);
    for (std::size_t j = 0; j < N; ++j) {
      lo[j] = lk0, hi[j] = lk1;
      lo[N + j] = lm0, hi[N + j] = lm1;
    }
    for (auto& s : latin_hypercube(p.starts, lo, hi, p.seed + N)) tasks.push_back({N, std::move(s)});
  }

  std::vector<Candidate> found(tasks.size());
  std::vector<std::size_t> evals(tasks.size(), 0);
  parallel_for(tasks.size(), [&](std::size_t t) {
    const std::size_t N = tasks[t].N;
    auto unpack = [N](std::span<const double> x, std::vector<double>& k, std::vector<double>& m) {
      k.resize(N);
      m.resize(N);
      for (std::size_t j = 0; j < N; ++j) {
        k[j] = std::exp(x[j]);
        m[j] = std::exp(x[N + j]);
      }
    };
    std::vector<double> k, m;
    if (N == 0) {
      found[t] = Candidate{{}, {}, objective({}, {}), std::nullopt, EndPoint::Interior};
      evals[t] = 1;
      return;
    }
    std::vector<double> lo(2 * N), hi(2 * N);
    for (std::size_t j = 0; j < N; ++j) {
      lo[j] = lk0, hi[j] = lk1;
      lo[N + j] = lm0, hi[N + j] = lm1;
    }
    auto f = [&](const std::vector<double>& x) {
      unpack(x, k, m);
      return objective.misfit(k, m);
    };
    const auto r = detail::levenberg_marquardt(f, tasks[t].start, lo, hi, options);
    unpack(r.point, k, m);
    found[t] = canonical(Candidate{k, m, 0.0, std::nullopt, r.end}, options.merge_tolerance);
    evals[t] = r.evaluations;
  });

  auto order = [](const Candidate& a, const Candidate& b) {
    if (a.residual != b.residual) return a.residual < b.residual;
    if (a.N() != b.N()) return a.N() < b.N();
    return std::tie(a.kappas, a.m_minus) < std::tie(b.kappas, b.m_minus);
  };
  std::sort(found.begin(), found.end(), order);
  auto same = [&](const Candidate& a, const Candidate& b) {
    if (a.N() != b.N()) return false;
    for (std::size_t j = 0; j < a.N(); ++j)
      if (std::abs(a.kappas[j] - b.kappas[j]) > options.dedupe_tolerance * b.kappas[j] ||
          std::abs(a.m_minus[j] - b.m_minus[j]) > options.dedupe_tolerance * b.m_minus[j])
        return false;
    return true;
  };
  RecoveryResult out;
  for (auto& c : found) {
    c.residual = objective(c.kappas, c.m_minus);
    if (!std::isfinite(c.residual)) continue;
    bool dup = false;
    for (auto& kept : out.candidates)
      if (same(c, kept)) {
        dup = true;
        kept.end = std::min(kept.end, c.end);
      }
    if (!dup) out.candidates.push_back(std::move(c));
  }
  std::sort(out.candidates.begin(), out.candidates.end(), order);
  for (std::size_t e : evals) out.evaluations += e;

  const auto first_minimum = std::find_if(out.candidates.begin(), out.candidates.end(),
                                          [](const Candidate& c) { return c.end == EndPoint::Interior; });
  require(first_minimum != out.candidates.end(), ErrorKind::SearchBudgetExhausted, "no interior local minimum");
  const double best = first_minimum->residual;
  out.objective_tolerance = p.objective_tolerance
                                ? *p.objective_tolerance
                                : std::max(options.floor_factor * best, 1e-12 * p.window.length());
  if (best >= 100.0 * out.objective_tolerance)
    throw Error(ErrorKind::SearchBudgetExhausted, "no candidate reached 100x the objective tolerance");
  out.verdict = verdict_for(out.candidates, out.objective_tolerance);
  out.window_non_ac = p.window_non_ac;
  out.theorem_violation_suspected = p.window_non_ac && out.verdict != Verdict::Unique;

  const std::size_t keep = std::min(options.keep_potentials, out.candidates.size());
  for (std::size_t i = 0; i < keep; ++i) {
    auto& c = out.candidates[i];
    try {
      c.potential = forward_map(p.k, p.L, c.kappas, c.m_minus, p.grid, options.marchenko);
    } catch (const Error&) {
    }
  }
  return out;
}

/// Throws TheoremViolationSuspected when a non-AC window did not give a unique answer.
inline void require_uniqueness(const RecoveryResult& r) {
  if (r.theorem_violation_suspected)
    throw Error(ErrorKind::TheoremViolationSuspected,
                "window is not absolutely continuous but the verdict is " + std::string(to_string(r.verdict)));
}

struct SweepPoint {
  double m = 0.0;
  double residual = 0.0;
};

struct SweepResult {
  double kappa = 0.0;
  double tolerance = 0.0;
  std::vector<SweepPoint> curve;
  /// Local minima of the curve, polished between their grid neighbours, that lie
  /// below the tolerance.
  std::vector<SweepPoint> minima;
};

inline std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  require(lo > 0 && hi > lo && n >= 2, ErrorKind::InvalidArgument, "log grid needs 0 < lo < hi and n >= 2");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return out;
}

/// Residual as a function of one norming constant, kappa held fixed.
inline SweepResult nonuniqueness_sweep(const RecoveryProblem& p, double kappa, std::span<const double> m_grid,
                                       const SearchOptions& options = {}) {
  const WindowObjective objective(p, options.marchenko);
  SweepResult s{kappa, 0.0, std::vector<SweepPoint>(m_grid.size()), {}};
  parallel_for(m_grid.size(), [&](std::size_t i) {
    const double k[] = {kappa};
    const double m[] = {m_grid[i]};
    s.curve[i] = {m_grid[i], objective(k, m)};
  });
  const std::size_t n = s.curve.size();
  auto residual_at = [&](double log_m) {
    const double k[] = {kappa};
    const double m[] = {std::exp(log_m)};
    return objective(k, m);
  };
  std::vector<SweepPoint> found;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = s.curve[i].residual;
    const bool left = i == 0 || r < s.curve[i - 1].residual;
    const bool right = i + 1 == n || r <= s.curve[i + 1].residual;
    if (!left || !right) continue;
    if (i == 0 || i + 1 == n) {
      found.push_back(s.curve[i]);
      continue;
    }
    // golden section on log m between the neighbours
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(s.curve[i - 1].m), b = std::log(s.curve[i + 1].m);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = residual_at(c), fd = residual_at(d);
    for (int it = 0; it < options.sweep_polish_iterations; ++it) {
      if (fc < fd) {
        b = d, d = c, fd = fc;
        c = b - g * (b - a), fc = residual_at(c);
      } else {
        a = c, c = d, fc = fd;
        d = a + g * (b - a), fd = residual_at(d);
      }
    }
    SweepPoint q = fc < fd ? SweepPoint{std::exp(c), fc} : SweepPoint{std::exp(d), fd};
    found.push_back(q.residual < r ? q : s.curve[i]);
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : found) best = std::min(best, q.residual);
  s.tolerance = p.objective_tolerance ? *p.objective_tolerance : options.floor_factor * best;
  for (const auto& q : found)
    if (q.residual < s.tolerance) s.minima.push_back(q);
  return s;
}

// ---------------------------------------------------------------------------
// Pair verification

/// A candidate as a potential to compare against the truth: V_window on the window
/// nodes, the Marchenko output elsewhere on the problem grid (zero beyond it).
/// Products of right Jost solutions only see the potential to the left of x, so the
/// grid's right end past the window is enough for the window checks.
inline Potential comparison_potential(const RecoveryProblem& p, const Candidate& c,
                                      const MarchenkoOptions& options = {}) {
  RecoveredPotential full = c.potential ? *c.potential : forward_map(p.k, p.L, c.kappas, c.m_minus, p.grid, options);
  const std::size_t first = p.grid.nearest(p.window_grid().x_min);
  for (std::size_t j = 0; j < p.v_window.size(); ++j) full.values[first + j] = p.v_window[j];
  return full.as_potential(p.window_jumps);
}

/// Scattering data of a candidate: the measured L and the candidate's bound data.
inline ScatteringData candidate_data(std::span<const double> k, std::span<const cd> L, const Candidate& c) {
  ScatteringData d = zero_data(k);
  d.coefficients.L.assign(L.begin(), L.end());
  for (std::size_t j = 0; j < c.N(); ++j) d.bound_states.push_back({c.kappas[j], c.m_minus[j], 0.0});
  return d;
}

struct VerifyOptions {
  MomentOptions moments{};
  MatchOptions match{};
  /// Window neighbourhoods of these points are not compared (pipeline pairs near jumps).
  std::vector<double> excluded{};
  double exclusion = 0.0;
  double reflection_tolerance = 1e-6;
  double constancy_tolerance = 1e-4;
  double identity_tolerance = 1e-5;
  /// L1 tolerance between the two forward_map outputs.
  double potential_tolerance = 5e-2;
  SpatialGrid potential_grid = SpatialGrid::with_spacing(-20.0, 11.0, 0.02);
  MarchenkoOptions marchenko{};
};

struct UniquenessReport {
  WindowConstancy constancy;
  MomentReport cascade;
  double x_prime = 0.0;
  MatchReport match;
  double potential_difference = 0.0;
  bool window_non_ac = false;
  bool constancy_ok = false, identities_ok = false, potentials_ok = false;
  bool passed = false;
  std::string explanation;
};

/// The comparison argument run on two concrete data sets: window constancy, the
/// derivative cascade, a common non-zero point, bound-data matching, and finally
/// agreement of the reconstructed potentials.
inline UniquenessReport verify_uniqueness_pair(const Potential& a, const ScatteringData& data_a, const Potential& b,
                                               const ScatteringData& data_b, const SpatialGrid& window,
                                               const VerifyOptions& options = {}) {
  auto stage = [](const char* name, auto&& body) {
    try {
      return body();
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(name) + ": " + e.what());
    }
  };
  UniquenessReport r;
  stage("preconditions", [&] {
    const auto& ka = data_a.coefficients.k;
    const auto& kb = data_b.coefficients.k;
    require(ka.size() == kb.size(), ErrorKind::KGridMismatch, "k grids differ");
    for (std::size_t j = 0; j < ka.size(); ++j) {
      require(std::abs(ka[j] - kb[j]) <= 1e-12 * std::max(1.0, ka[j]), ErrorKind::KGridMismatch, "k grids differ");
      require(std::abs(data_a.coefficients.L[j] - data_b.coefficients.L[j]) <= options.reflection_tolerance,
              ErrorKind::InvalidArgument, "left reflection coefficients differ");
    }
    return 0;
  });

  // the window checks skip excluded neighbourhoods by comparing on sub-windows
  std::vector<SpatialGrid> pieces;
  {
    std::vector<double> cuts;
    for (double x : options.excluded)
      if (x > window.x_min && x < window.x_max) cuts.push_back(x);
    std::sort(cuts.begin(), cuts.end());
    double lo = window.x_min;
    for (double x : cuts) {
      if (x - options.exclusion - lo > 4 * window.dx()) pieces.push_back(window.restrict_to(lo, x - options.exclusion));
      lo = x + options.exclusion;
    }
    if (window.x_max - lo > 4 * window.dx()) pieces.push_back(window.restrict_to(lo, window.x_max));
  }
  require(!pieces.empty(), ErrorKind::InvalidArgument, "exclusions cover the window");
  const SpatialGrid& main = *std::max_element(pieces.begin(), pieces.end(), [](const auto& x, const auto& y) { return x.n < y.n; });

  const Window w(window.x_min, window.x_max);
  r.window_non_ac = !jumps_inside(a, w).empty() || !jumps_inside(b, w).empty();
  r.constancy = stage("window_constancy", [&] {
    return window_constancy(data_a.bound_states, data_b.bound_states, a, b, main, options.moments);
  });
  r.cascade = stage("derivative_cascade_check", [&] {
    return derivative_cascade_check(data_a.bound_states, data_b.bound_states, a, b, main, -1, options.moments);
  });
  r.constancy_ok = r.constancy.mismatch < options.constancy_tolerance && r.constancy.max_deviation < options.constancy_tolerance;
  r.identities_ok = r.cascade.product_identity < options.identity_tolerance &&
                    r.cascade.derivative_identity < options.identity_tolerance;

  const auto ka = kappas_of(data_a.bound_states), kb = kappas_of(data_b.bound_states);
  const ProductTable table = stage("product_fields", [&] { return product_fields(a, b, ka, kb, main, options.moments); });
  r.x_prime = stage("common_nonzero_point", [&] {
    std::vector<double> zeros;
    for (const auto& c : table.columns)
      for (const auto& z : product_zeros(table, c.kappa)) zeros.push_back(z.x);
    return common_nonzero_point(zeros, main);
  });
  r.match = stage("match_bound_data", [&] {
    return match_bound_data(data_a.bound_states, data_b.bound_states, table, r.x_prime, options.match);
  });

  if (!r.match.mismatch) {
    auto rebuild = [&](const ScatteringData& d) {
      std::vector<double> k, m;
      for (const auto& s : d.bound_states) {
        k.push_back(s.kappa);
        m.push_back(s.m_minus);
      }
      return forward_map(d.coefficients.k, d.coefficients.L, k, m, options.potential_grid, options.marchenko);
    };
    const RecoveredPotential va = stage("forward_map", [&] { return rebuild(data_a); });
    const RecoveredPotential vb = stage("forward_map", [&] { return rebuild(data_b); });
    const double h = va.grid.dx();
    for (std::size_t i = 0; i < va.grid.n; ++i)
      r.potential_difference += (i == 0 || i + 1 == va.grid.n ? 0.5 : 1.0) * h * std::abs(va.values[i] - vb.values[i]);
    r.potentials_ok = r.potential_difference < options.potential_tolerance;
  }
  r.passed = r.constancy_ok && r.identities_ok && !r.match.mismatch && r.potentials_ok;
  if (r.match.mismatch)
    r.explanation = r.window_non_ac ? "bound data differ although the window is not absolutely continuous"
                                    : "bound data differ; the window is absolutely continuous (window_non_ac = false)";
  else if (!r.passed)
    r.explanation = "bound data match but a tolerance was exceeded";
  else
    r.explanation = "bound data match and the reconstructed potentials agree";
  return r;
}

// ---------------------------------------------------------------------------
// JSON and CSV

inline nlohmann::json to_json_value(const RecoveryProblem& p) {
  nlohmann::json j;
  j["k"] = p.k;
  std::vector<double> re, im;
  for (const cd& z : p.L) {
    re.push_back(z.real());
    im.push_back(z.imag());
  }
  j["L_re"] = re;
  j["L_im"] = im;
  j["window"] = {p.window.a, p.window.b};
  j["v_window"] = p.v_window;
  j["window_jumps"] = p.window_jumps;
  j["window_non_ac"] = p.window_non_ac;
  j["search_box"] = {{"n_max", p.box.n_max},
                     {"kappa", {p.box.kappa_min, p.box.kappa_max}},
                     {"m", {p.box.m_min, p.box.m_max}}};
  if (p.objective_tolerance) j["objective_tolerance"] = *p.objective_tolerance;
  j["grid"] = {{"x_min", p.grid.x_min}, {"x_max", p.grid.x_max}, {"n", p.grid.n}};
  j["jump_exclusion"] = p.jump_exclusion;
  j["starts"] = p.starts;
  j["seed"] = p.seed;
  return j;
}

inline SearchBox search_box_from_json(const nlohmann::json& j, SearchBox box = {}) {
  box.n_max = j.value("n_max", box.n_max);
  if (j.contains("kappa")) {
    box.kappa_min = j["kappa"].at(0).get<double>();
    box.kappa_max = j["kappa"].at(1).get<double>();
  }
  if (j.contains("m")) {
    box.m_min = j["m"].at(0).get<double>();
    box.m_max = j["m"].at(1).get<double>();
  }
  return box;
}

/// Either the explicit form written by to_json_value, or a compact form naming a
/// "truth" potential from which L and the window values are generated:
///   {"truth": {...}, "window": [a, b], "k_max": 30, "n_k": 2048, "search_box": {...}}
inline RecoveryProblem recovery_problem_from_json(const nlohmann::json& j) {
  try {
    const Window w(j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>());
    if (j.contains("truth")) {
      const Potential truth = potential_from_json(j.at("truth"));
      const auto kg = uniform_k_grid(j.value("k_max", 30.0), j.value("n_k", std::size_t{2048}));
      const SpatialGrid line(j.value("line_x_min", -20.0), j.value("line_x_max", 20.0), j.value("line_n", std::size_t{2001}));
      std::optional<SpatialGrid> grid;
      if (j.contains("grid"))
        grid = SpatialGrid(j["grid"].at("x_min").get<double>(), j["grid"].at("x_max").get<double>(),
                           j["grid"].at("n").get<std::size_t>());
      RecoveryProblem p = make_problem(truth, w, kg, line, search_box_from_json(j.value("search_box", nlohmann::json::object())), grid);
      if (j.contains("objective_tolerance")) p.objective_tolerance = j["objective_tolerance"].get<double>();
      p.starts = j.value("starts", p.starts);
      p.seed = j.value("seed", p.seed);
      p.validate();
      return p;
    }
    RecoveryProblem p;
    p.k = j.at("k").get<std::vector<double>>();
    const auto re = j.at("L_re").get<std::vector<double>>();
    const auto im = j.at("L_im").get<std::vector<double>>();
    require(re.size() == p.k.size() && im.size() == p.k.size(), ErrorKind::ParseError, "L columns must match k");
    for (std::size_t i = 0; i < re.size(); ++i) p.L.emplace_back(re[i], im[i]);
    p.window = w;
    p.v_window = j.at("v_window").get<std::vector<double>>();
    p.window_jumps = j.value("window_jumps", std::vector<double>{});
    p.window_non_ac = j.value("window_non_ac", !p.window_jumps.empty());
    p.box = search_box_from_json(j.value("search_box", nlohmann::json::object()));
    if (j.contains("objective_tolerance")) p.objective_tolerance = j["objective_tolerance"].get<double>();
    const auto& g = j.at("grid");
    p.grid = SpatialGrid(g.at("x_min").get<double>(), g.at("x_max").get<double>(), g.at("n").get<std::size_t>());
    p.jump_exclusion = j.value("jump_exclusion", p.jump_exclusion);
    p.starts = j.value("starts", p.starts);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
}

inline nlohmann::json to_json_value(const RecoveryResult& r) {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : r.candidates)
    cs.push_back({{"N", c.N()},
                  {"kappa", c.kappas},
                  {"m_minus", c.m_minus},
                  {"residual", c.residual},
                  {"end_point", std::string(to_string(c.end))}});
  return {{"verdict", std::string(to_string(r.verdict))},
          {"objective_tolerance", r.objective_tolerance},
          {"window_non_ac", r.window_non_ac},
          {"theorem_violation_suspected", r.theorem_violation_suspected},
          {"evaluations", r.evaluations},
          {"candidates", cs}};
}

inline nlohmann::json to_json_value(const SweepResult& s) {
  std::vector<double> m, res;
  for (const auto& q : s.curve) {
    m.push_back(q.m);
    res.push_back(q.residual);
  }
  std::vector<double> at, at_residual;
  for (const auto& q : s.minima) {
    at.push_back(q.m);
    at_residual.push_back(q.residual);
  }
  return {{"kappa", s.kappa},   {"tolerance", s.tolerance},         {"m", m},
          {"residual", res},    {"minima_m", at},                   {"minima_residual", at_residual},
          {"sub_threshold_minima", s.minima.size()}};
}

inline nlohmann::json to_json_value(const UniquenessReport& r) {
  return {{"passed", r.passed},
          {"explanation", r.explanation},
          {"window_non_ac", r.window_non_ac},
          {"window_constancy", to_json_value(r.constancy)},
          {"constancy_ok", r.constancy_ok},
          {"cascade", to_json_value(r.cascade)},
          {"identities_ok", r.identities_ok},
          {"x_prime", r.x_prime},
          {"match", to_json_value(r.match)},
          {"potential_difference", r.potential_difference},
          {"potentials_ok", r.potentials_ok}};
}

inline void write_sweep_csv(const std::string& path, const SweepResult& s) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot open " + path);
  out.precision(17);
  out << "m,residual\n";
  for (const auto& q : s.curve) out << q.m << "," << q.residual << "\n";
}

}  // namespace scatter1d
