#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"

namespace scatter1d {

/// Interval [a, b] on which the potential is treated as known a priori.
struct Window {
  double a = 0.0;
  double b = 1.0;

  Window() = default;
  Window(double lo, double hi) : a(lo), b(hi) {
    require(lo < hi, ErrorKind::InvalidArgument, "window requires a < b");
  }
  double length() const { return b - a; }
  bool contains(double x) const { return x >= a && x <= b; }
  bool operator==(const Window&) const = default;
};

class Potential;

struct ZeroPotential {};

/// values[i] on [breakpoints[i], breakpoints[i+1]), zero outside. Right-continuous.
struct PiecewiseConstant {
  std::vector<double> breakpoints;
  std::vector<double> values;
};

/// -2 kappa^2 sech^2(kappa (x - center)), the reflectionless one-soliton.
struct SechSquaredSoliton {
  double kappa = 1.0;
  double center = 0.0;
};

/// Linear interpolation of samples on a uniform grid, zero outside [x_min, x_max).
/// `jumps` marks positions where the sampled function is flagged discontinuous.
struct SampledGrid {
  SpatialGrid grid;
  std::vector<double> values;
  std::vector<double> jumps;
};

struct SumPotential {
  std::vector<Potential> terms;
};

/// Immutable description of a real potential on the line.
class Potential {
 public:
  using Kind = std::variant<ZeroPotential, PiecewiseConstant, SechSquaredSoliton, SumPotential, SampledGrid>;

  Potential() : kind_(ZeroPotential{}) {}
  Potential(Kind kind, std::optional<Window> window = std::nullopt)
      : kind_(std::move(kind)), window_(window) {
    validate();
    collect_structure();
  }

  static Potential zero() { return Potential(ZeroPotential{}); }
  static Potential piecewise_constant(std::vector<double> breakpoints, std::vector<double> values) {
    return Potential(PiecewiseConstant{std::move(breakpoints), std::move(values)});
  }
  static Potential soliton(double kappa, double center = 0.0) {
    return Potential(SechSquaredSoliton{kappa, center});
  }
  static Potential sum(std::vector<Potential> terms) { return Potential(SumPotential{std::move(terms)}); }
  static Potential sampled(SpatialGrid grid, std::vector<double> values, std::vector<double> jumps = {}) {
    return Potential(SampledGrid{grid, std::move(values), std::move(jumps)});
  }

  const Kind& kind() const { return kind_; }
  const std::optional<Window>& known_window() const { return window_; }
  Potential with_window(Window w) const {
    Potential copy = *this;
    copy.window_ = w;
    return copy;
  }
  Potential without_window() const {
    Potential copy = *this;
    copy.window_.reset();
    return copy;
  }

  /// V(x); at a breakpoint the right limit.
  double operator()(double x) const { return limit(x, +1); }

  /// One-sided limit of V at x: direction > 0 from the right, < 0 from the left.
  double limit(double x, int direction) const {
    return std::visit([&](const auto& k) { return limit_of(k, x, direction); }, kind_);
  }

  /// Sorted points where V may fail to be smooth (integration steps are split there).
  const std::vector<double>& breakpoints() const { return breakpoints_; }

  /// Sorted points where V may jump (candidates for non-absolute continuity).
  const std::vector<double>& jump_candidates() const { return jump_candidates_; }

  /// Interior sample-grid points flagged discontinuous (jumps by declaration).
  const std::vector<double>& declared_jumps() const { return declared_jumps_; }

  /// Closed hull outside of which V vanishes identically (possibly infinite).
  std::pair<double, double> support() const { return support_; }

  /// A lower bound for inf V (sum of the negative parts of the terms).
  double lower_bound() const { return lower_bound_; }

  bool is_zero() const { return std::holds_alternative<ZeroPotential>(kind_); }

 private:
  static double limit_of(const ZeroPotential&, double, int) { return 0.0; }

  static double limit_of(const PiecewiseConstant& p, double x, int direction) {
    const auto& bp = p.breakpoints;
    // index of the first breakpoint strictly greater (right limit) or >= (left limit)
    auto it = direction >= 0 ? std::upper_bound(bp.begin(), bp.end(), x)
                             : std::lower_bound(bp.begin(), bp.end(), x);
    if (it == bp.begin() || it == bp.end()) return 0.0;
    return p.values[static_cast<std::size_t>(it - bp.begin()) - 1];
  }

  static double limit_of(const SechSquaredSoliton& s, double x, int) {
    const double c = std::cosh(s.kappa * (x - s.center));
    return -2.0 * s.kappa * s.kappa / (c * c);
  }

  static double limit_of(const SumPotential& s, double x, int direction) {
    double v = 0.0;
    for (const auto& t : s.terms) v += t.limit(x, direction);
    return v;
  }

  static double limit_of(const SampledGrid& g, double x, int direction) {
    const double lo = g.grid.x_min;
    const double hi = g.grid.x_max;
    if (direction >= 0 ? (x < lo || x >= hi) : (x <= lo || x > hi)) return 0.0;
    const double h = g.grid.dx();
    const double t = (x - lo) / h;
    // cell [x_i, x_i+1) from the right, (x_i, x_i+1] from the left
    double cell = direction >= 0 ? std::floor(t) : std::ceil(t) - 1.0;
    const std::size_t last = g.grid.n - 2;
    auto i = static_cast<std::size_t>(std::clamp(cell, 0.0, static_cast<double>(last)));
    const auto& v = g.values;
    auto line = [&](std::size_t a, double at) { return v[a] + (v[a + 1] - v[a]) * (at - static_cast<double>(a)); };
    // no interpolation across a declared jump in (x_i, x_i+1]; samples are right-continuous
    const double eps = 1e-9;
    const auto j = std::upper_bound(g.jumps.begin(), g.jumps.end(), lo + (static_cast<double>(i) + eps) * h);
    if (j != g.jumps.end() && *j <= lo + (static_cast<double>(i) + 1.0 + eps) * h) {
      const double s = (*j - lo) / h;
      const bool left_side = t < s - eps || (direction < 0 && t <= s + eps);
      if (left_side) return i >= 1 ? line(i - 1, t) : v[i];
      return i + 2 <= last + 1 ? line(i + 1, t) : v[i + 1];
    }
    return line(i, t);
  }

  void validate() const {
    std::visit(
        [](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, PiecewiseConstant>) {
            require(k.breakpoints.size() >= 2 && k.values.size() + 1 == k.breakpoints.size(),
                    ErrorKind::InvalidArgument, "piecewise constant needs n+1 breakpoints for n values");
            for (std::size_t i = 1; i < k.breakpoints.size(); ++i)
              require(k.breakpoints[i] > k.breakpoints[i - 1], ErrorKind::InvalidArgument,
                      "breakpoints must be strictly increasing");
            for (double v : k.values)
              require(std::isfinite(v), ErrorKind::InvalidArgument, "non-finite potential value");
          } else if constexpr (std::is_same_v<T, SechSquaredSoliton>) {
            require(k.kappa > 0 && std::isfinite(k.kappa), ErrorKind::InvalidArgument,
                    "soliton requires kappa > 0");
            require(std::isfinite(k.center), ErrorKind::InvalidArgument, "soliton center must be finite");
          } else if constexpr (std::is_same_v<T, SampledGrid>) {
            require(k.values.size() == k.grid.n, ErrorKind::InvalidArgument,
                    "sampled values must match the grid size");
            for (double v : k.values)
              require(std::isfinite(v), ErrorKind::InvalidArgument, "non-finite potential value");
            require(std::is_sorted(k.jumps.begin(), k.jumps.end()), ErrorKind::InvalidArgument,
                    "sampled jumps must be sorted");
          }
        },
        kind_);
  }

  void collect_structure() {
    breakpoints_.clear();
    jump_candidates_.clear();
    declared_jumps_.clear();
    lower_bound_ = 0.0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    support_ = {inf, -inf};
    std::visit(
        [&](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ZeroPotential>) {
            support_ = {0.0, 0.0};
          } else if constexpr (std::is_same_v<T, PiecewiseConstant>) {
            breakpoints_ = k.breakpoints;
            jump_candidates_ = k.breakpoints;
            support_ = {k.breakpoints.front(), k.breakpoints.back()};
            for (double v : k.values) lower_bound_ = std::min(lower_bound_, v);
          } else if constexpr (std::is_same_v<T, SechSquaredSoliton>) {
            support_ = {-inf, inf};
            lower_bound_ = -2.0 * k.kappa * k.kappa;
          } else if constexpr (std::is_same_v<T, SampledGrid>) {
            breakpoints_ = k.grid.points();
            jump_candidates_ = k.jumps;
            declared_jumps_ = k.jumps;
            jump_candidates_.push_back(k.grid.x_min);
            jump_candidates_.push_back(k.grid.x_max);
            support_ = {k.grid.x_min, k.grid.x_max};
            for (double v : k.values) lower_bound_ = std::min(lower_bound_, v);
          } else if constexpr (std::is_same_v<T, SumPotential>) {
            for (const auto& t : k.terms) {
              breakpoints_.insert(breakpoints_.end(), t.breakpoints().begin(), t.breakpoints().end());
              jump_candidates_.insert(jump_candidates_.end(), t.jump_candidates().begin(),
                                      t.jump_candidates().end());
              declared_jumps_.insert(declared_jumps_.end(), t.declared_jumps().begin(), t.declared_jumps().end());
              if (!t.is_zero()) {
                support_.first = std::min(support_.first, t.support().first);
                support_.second = std::max(support_.second, t.support().second);
              }
              lower_bound_ += t.lower_bound();
            }
            if (support_.first > support_.second) support_ = {0.0, 0.0};
          }
        },
        kind_);
    auto tidy = [](std::vector<double>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    tidy(breakpoints_);
    tidy(jump_candidates_);
    tidy(declared_jumps_);
  }

  Kind kind_;
  std::optional<Window> window_;
  std::vector<double> breakpoints_;
  std::vector<double> jump_candidates_;
  std::vector<double> declared_jumps_;
  std::pair<double, double> support_{0.0, 0.0};
  double lower_bound_ = 0.0;
};

inline double evaluate(const Potential& v, double x) { return v(x); }

/// Integral of (1 + |x|)|V| over [-truncation, truncation]: composite trapezoid on
/// panels aligned with the breakpoints and the origin, halved until two successive
/// Richardson-corrected values agree to 1e-10 relative. NonIntegrable when the last
/// halving still moves the value by more than 1e-6 relative.
inline double first_moment_norm(const Potential& v, double truncation = 20.0) {
  require(truncation > 0, ErrorKind::InvalidArgument, "truncation must be positive");
  std::vector<double> cuts{-truncation, 0.0, truncation};
  for (double b : v.breakpoints())
    if (b > -truncation && b < truncation) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto integrand = [&](double x, int side) { return (1.0 + std::abs(x)) * std::abs(v.limit(x, side)); };
  auto trapezoid = [&](std::size_t panels) {
    double total = 0.0;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
      const double lo = cuts[s];
      const double hi = cuts[s + 1];
      const double h = (hi - lo) / static_cast<double>(panels);
      double acc = 0.5 * (integrand(lo, +1) + integrand(hi, -1));
      for (std::size_t i = 1; i < panels; ++i) acc += integrand(lo + h * static_cast<double>(i), +1);
      total += acc * h;
    }
    return total;
  };

  std::size_t panels = 16;
  double coarse = trapezoid(panels);
  double previous = std::numeric_limits<double>::quiet_NaN();
  double change = std::numeric_limits<double>::infinity();
  for (int level = 0; level < 14; ++level) {
    panels *= 2;
    const double fine = trapezoid(panels);
    const double extrapolated = fine + (fine - coarse) / 3.0;
    if (std::isfinite(previous)) {
      const double scale = std::max(std::abs(extrapolated), std::abs(previous));
      if (scale == 0.0) return 0.0;
      change = std::abs(extrapolated - previous) / scale;
      if (change <= 1e-10) return extrapolated;
    }
    previous = extrapolated;
    coarse = fine;
  }
  if (change <= 1e-6) return previous;
  throw Error(ErrorKind::NonIntegrable, "first moment did not stabilize under refinement");
}

/// Integral of V over [lo, hi]: adaptive Simpson on each smooth piece between breakpoints.
inline double integrate(const Potential& v, double lo, double hi, double tolerance = 1e-12) {
  if (hi == lo) return 0.0;
  if (hi < lo) return -integrate(v, hi, lo, tolerance);
  std::vector<double> cuts{lo};
  for (double b : v.breakpoints())
    if (b > lo && b < hi) cuts.push_back(b);
  cuts.push_back(hi);

  double total = 0.0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double a = cuts[s], b = cuts[s + 1];
    // interior of a smooth piece; one-sided limits at its ends
    auto f = [&](double x) { return x <= a ? v.limit(a, +1) : x >= b ? v.limit(b, -1) : v(x); };
    auto simpson = [](double fa, double fm, double fb, double h) { return h / 6.0 * (fa + 4.0 * fm + fb); };
    auto refine = [&](auto&& self, double x0, double x1, double f0, double fm, double f1, double whole, double tol,
                      int depth) -> double {
      const double m = 0.5 * (x0 + x1);
      const double fl = f(0.5 * (x0 + m)), fr = f(0.5 * (m + x1));
      const double left = simpson(f0, fl, fm, m - x0), right = simpson(fm, fr, f1, x1 - m);
      const double diff = left + right - whole;
      if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
      return self(self, x0, m, f0, fl, fm, left, 0.5 * tol, depth - 1) +
             self(self, m, x1, fm, fr, f1, right, 0.5 * tol, depth - 1);
    };
    // seed with a fixed partition so that narrow features are not stepped over
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / 0.5)));
    const double h = (b - a) / pieces;
    for (int p = 0; p < pieces; ++p) {
      const double x0 = a + h * p, x1 = p + 1 == pieces ? b : a + h * (p + 1);
      const double f0 = f(x0), f1 = f(x1), fm = f(0.5 * (x0 + x1));
      total += refine(refine, x0, x1, f0, fm, f1, simpson(f0, fm, f1, x1 - x0), tolerance / pieces, 40);
    }
  }
  return total;
}

/// Positions strictly inside (a, b) where the one-sided limits of V differ.
inline std::vector<double> jumps_inside(const Potential& v, Window w) {
  std::vector<double> out;
  for (double x : v.jump_candidates()) {
    if (x <= w.a || x >= w.b) continue;
    if (std::binary_search(v.declared_jumps().begin(), v.declared_jumps().end(), x)) {
      out.push_back(x);
      continue;
    }
    const double left = v.limit(x, -1);
    const double right = v.limit(x, +1);
    const double scale = std::max({1.0, std::abs(left), std::abs(right)});
    if (std::abs(right - left) > 1e-14 * scale) out.push_back(x);
  }
  return out;
}

/// Structural decision: false iff V has a jump strictly inside the known window.
inline bool is_absolutely_continuous_on_window(const Potential& v) {
  require(v.known_window().has_value(), ErrorKind::WindowMissing, "potential has no known window");
  return jumps_inside(v, *v.known_window()).empty();
}

/// The potential x -> V(-x); the known window (a, b) maps to (-b, -a).
inline Potential mirror(const Potential& v) {
  Potential::Kind mirrored = std::visit(
      [](const auto& k) -> Potential::Kind {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroPotential>) {
          return k;
        } else if constexpr (std::is_same_v<T, PiecewiseConstant>) {
          PiecewiseConstant m;
          for (auto it = k.breakpoints.rbegin(); it != k.breakpoints.rend(); ++it) m.breakpoints.push_back(-*it);
          m.values.assign(k.values.rbegin(), k.values.rend());
          return m;
        } else if constexpr (std::is_same_v<T, SechSquaredSoliton>) {
          return SechSquaredSoliton{k.kappa, -k.center};
        } else if constexpr (std::is_same_v<T, SumPotential>) {
          SumPotential m;
          for (const auto& t : k.terms) m.terms.push_back(mirror(t));
          return m;
        } else {
          SampledGrid m{SpatialGrid(-k.grid.x_max, -k.grid.x_min, k.grid.n),
                        std::vector<double>(k.values.rbegin(), k.values.rend()), {}};
          for (auto j = k.jumps.rbegin(); j != k.jumps.rend(); ++j) m.jumps.push_back(-*j);
          return m;
        }
      },
      v.kind());
  std::optional<Window> w;
  if (v.known_window()) w = Window(-v.known_window()->b, -v.known_window()->a);
  return Potential(std::move(mirrored), w);
}

/// Samples V on a grid (right limits).
inline std::vector<double> sample(const Potential& v, const SpatialGrid& grid) {
  std::vector<double> out(grid.n);
  for (std::size_t i = 0; i < grid.n; ++i) out[i] = v(grid[i]);
  return out;
}

// ---------------------------------------------------------------------------
// JSON and CSV

inline nlohmann::json to_json_value(const Potential& v);

inline void to_json(nlohmann::json& j, const Potential& v) { j = to_json_value(v); }

inline nlohmann::json to_json_value(const Potential& v) {
  nlohmann::json j = std::visit(
      [](const auto& k) -> nlohmann::json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroPotential>) {
          return {{"kind", "Zero"}};
        } else if constexpr (std::is_same_v<T, PiecewiseConstant>) {
          return {{"kind", "PiecewiseConstant"}, {"breakpoints", k.breakpoints}, {"values", k.values}};
        } else if constexpr (std::is_same_v<T, SechSquaredSoliton>) {
          return {{"kind", "SechSquaredSoliton"}, {"kappa", k.kappa}, {"center", k.center}};
        } else if constexpr (std::is_same_v<T, SumPotential>) {
          nlohmann::json terms = nlohmann::json::array();
          for (const auto& t : k.terms) terms.push_back(to_json_value(t));
          return {{"kind", "Sum"}, {"terms", terms}};
        } else {
          return {{"kind", "SampledGrid"},
                  {"x_min", k.grid.x_min},
                  {"x_max", k.grid.x_max},
                  {"n", k.grid.n},
                  {"values", k.values},
                  {"jumps", k.jumps}};
        }
      },
      v.kind());
  if (v.known_window()) j["known_window"] = {v.known_window()->a, v.known_window()->b};
  return j;
}

inline Potential potential_from_json(const nlohmann::json& j) {
  try {
    require(j.is_object() && j.contains("kind"), ErrorKind::ParseError, "potential needs a \"kind\" field");
    const std::string kind = j.at("kind").get<std::string>();
    std::optional<Window> window;
    if (j.contains("known_window")) {
      const auto& w = j.at("known_window");
      require(w.is_array() && w.size() == 2, ErrorKind::ParseError, "known_window must be [a, b]");
      window = Window(w[0].get<double>(), w[1].get<double>());
    }
    if (kind == "Zero") return Potential(ZeroPotential{}, window);
    if (kind == "PiecewiseConstant")
      return Potential(PiecewiseConstant{j.at("breakpoints").get<std::vector<double>>(),
                                         j.at("values").get<std::vector<double>>()},
                       window);
    if (kind == "SechSquaredSoliton")
      return Potential(SechSquaredSoliton{j.at("kappa").get<double>(), j.value("center", 0.0)}, window);
    if (kind == "Sum") {
      SumPotential s;
      for (const auto& t : j.at("terms")) s.terms.push_back(potential_from_json(t));
      return Potential(std::move(s), window);
    }
    if (kind == "SampledGrid") {
      SpatialGrid g(j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("n").get<std::size_t>());
      return Potential(SampledGrid{g, j.at("values").get<std::vector<double>>(),
                                   j.value("jumps", std::vector<double>{})},
                       window);
    }
    throw Error(ErrorKind::ParseError, "unknown potential kind \"" + kind + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidArgument) throw Error(ErrorKind::ParseError, e.what());
    throw;
  }
}

/// Two-column CSV (x, value) with a header line.
inline void write_grid_csv(const std::string& path, const SpatialGrid& grid, const std::vector<double>& values,
                           const std::string& column = "V") {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot open " + path);
  out.precision(17);
  out << "x," << column << "\n";
  for (std::size_t i = 0; i < grid.n; ++i) out << grid[i] << "," << values[i] << "\n";
}

// ---------------------------------------------------------------------------
// Catalog

namespace catalog {

inline Potential zero() { return Potential::zero(); }
inline Potential soliton() { return Potential::soliton(1.0, 0.0); }
/// Square well of depth -1 on [0, 2].
inline Potential well() { return Potential::piecewise_constant({0.0, 2.0}, {-1.0}); }
inline Potential well_plus_soliton() { return Potential::sum({well(), soliton()}); }

inline std::vector<std::pair<std::string, Potential>> all() {
  return {{"zero", zero()}, {"soliton", soliton()}, {"well", well()}, {"well_soliton", well_plus_soliton()}};
}

inline Potential by_name(const std::string& name) {
  for (auto& [n, p] : all())
    if (n == name) return p;
  throw Error(ErrorKind::InvalidArgument, "unknown catalog entry \"" + name + "\"");
}

}  // namespace catalog

}  // namespace scatter1d
