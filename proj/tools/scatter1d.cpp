#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "scatter1d.hpp"

#ifndef SCATTER1D_DEMO_DIR
#define SCATTER1D_DEMO_DIR "demos"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scatter1d;

namespace {

enum Exit { Pass = 0, Finding = 1, InputError = 2, NumericalError = 3 };

/// An error tagged with the pipeline stage that raised it.
struct StageError {
  std::string stage;
  Error error;
};

template <class F>
auto in_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    throw StageError{stage, e};
  } catch (const nlohmann::json::exception& e) {
    throw StageError{stage, Error(ErrorKind::ParseError, e.what())};
  }
}

/// Bad files and arguments are input errors; anything a solver stage rejects is numerical.
int exit_code(const std::string& stage, ErrorKind k) {
  if (k == ErrorKind::ParseError) return InputError;
  if (stage == "input" || stage == "config") return InputError;
  return NumericalError;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::InvalidArgument, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

struct Overrides {
  std::string config_path;
  std::string out;
  std::size_t grid_n = 0;
  double k_max = 0.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

/// Config file first, then command-line flags. `explicit_keys` names every field
/// that did not come from the defaults.
struct LoadedConfig {
  RunConfig config;
  std::set<std::string> explicit_keys;
};

LoadedConfig load_config(const Overrides& o) {
  LoadedConfig c;
  if (!o.config_path.empty()) {
    const json j = read_json(o.config_path);
    c.config = run_config_from_json(j);
    for (const auto& [key, _] : j.items()) c.explicit_keys.insert(key);
  }
  if (!o.out.empty()) c.config.output_dir = o.out, c.explicit_keys.insert("output_dir");
  if (o.grid_n) c.config.n = o.grid_n, c.explicit_keys.insert("n");
  if (o.k_max > 0) c.config.k_max = o.k_max, c.explicit_keys.insert("k_max");
  if (o.seed_given) c.config.seed = o.seed, c.explicit_keys.insert("seed");
  try {
    c.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  return c;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.output_dir);
  fs::create_directories(dir);
  return dir;
}

/// A JSON value that is either inline or a path (relative to `base`) to a JSON file.
json resolve(const json& j, const fs::path& base) {
  if (j.is_string()) return read_json((base / j.get<std::string>()).string());
  return j;
}

Potential potential_argument(const std::string& path, const RunConfig& c) {
  if (path.empty()) return catalog::by_name(c.catalog);
  return potential_from_json(read_json(path));
}

// ---------------------------------------------------------------------------

int cmd_forward(const LoadedConfig& lc, const std::string& potential_path) {
  const RunConfig& c = lc.config;
  const Potential v = in_stage("input", [&] { return potential_argument(potential_path, c); });
  const ScatteringData d = in_stage("forward", [&] { return forward(v, c.k_grid(), c.grid()); });
  const double defect = unitarity_defect(d.coefficients);
  const fs::path dir = output_dir(c);
  json out{{"provenance", provenance(c, "forward")},
           {"potential", to_json_value(v)},
           {"unitarity_defect", defect},
           {"unitarity_ok", defect < c.unitarity_tolerance},
           {"data", to_json_value(d)}};
  write_json(dir / "scattering.json", out);
  write_scattering_csv((dir / "scattering.csv").string(), d);
  std::cout << "bound states: " << d.bound_states.size() << "\n";
  for (const auto& b : d.bound_states)
    std::cout << "  kappa " << b.kappa << "  m- " << b.m_minus << "  m+ " << b.m_plus << "\n";
  std::cout << "unitarity defect " << defect << "\n";
  return Pass;
}

int cmd_reconstruct(const LoadedConfig& lc, const std::string& data_path, const std::string& reference_path) {
  const RunConfig& c = lc.config;
  auto [data, reference] = in_stage("input", [&] {
    json j = read_json(data_path);
    if (j.contains("data")) j = j.at("data");
    const ScatteringData d = scattering_data_from_json(j);
    const Potential ref = reference_path.empty() ? Potential::zero() : potential_from_json(read_json(reference_path));
    return std::pair{d, ref};
  });
  const SpatialGrid grid = c.grid();
  const ScatteringData ref_data = in_stage("reference forward", [&] {
    return reference.is_zero() ? zero_data(data.coefficients.k) : forward(reference, data.coefficients.k, grid);
  });
  const MarchenkoKernel kernel = in_stage("build_phi", [&] { return build_phi(data, reference, ref_data, grid); });
  const MarchenkoSolver solver = in_stage("solve", [&] { return MarchenkoSolver(kernel); });
  const BField field = solver.field();
  const RecoveredPotential v = potential_from_diagonal(grid, field.diagonal, reference);
  const Potential recovered = v.as_potential(reference.jump_candidates());
  const double k_probe = data.coefficients.k[data.coefficients.k.size() / 8];
  const double transformation = in_stage("transformation_residual", [&] {
    return transformation_residual(kernel, field, recovered, k_probe);
  });
  const double pde = in_stage("pde_residual", [&] {
    return pde_residual(field, recovered, reference, Window(grid.x_min + 1.0, grid.x_max - 1.0));
  });

  const fs::path dir = output_dir(c);
  {
    std::ofstream csv(dir / "potential.csv");
    csv.precision(17);
    csv << "x,V,V_minus_reference\n";
    for (std::size_t i = 0; i < grid.n; ++i) csv << grid[i] << "," << v.values[i] << "," << v.values[i] - reference(grid[i]) << "\n";
  }
  write_json(dir / "reconstruct.json", {{"provenance", provenance(c, "reconstruct")},
                                        {"reference", to_json_value(reference)},
                                        {"transformation_residual", transformation},
                                        {"transformation_k", k_probe},
                                        {"pde_residual", pde},
                                        {"condition_estimate", solver.condition_estimate()}});
  std::cout << "transformation residual " << transformation << " (k = " << k_probe << ")\n"
            << "pde residual " << pde << "\n";
  return Pass;
}

int cmd_recover(const LoadedConfig& lc, const std::string& problem_path) {
  const RunConfig& c = lc.config;
  auto [problem, sweep_spec] = in_stage("input", [&] {
    json j = read_json(problem_path);
    if (j.contains("truth")) {
      if (lc.explicit_keys.count("k_max")) j["k_max"] = c.k_max;
      if (lc.explicit_keys.count("n_k")) j["n_k"] = c.n_k;
      if (lc.explicit_keys.count("n")) j["line_n"] = c.n;
    }
    if (lc.explicit_keys.count("seed")) j["seed"] = c.seed;
    if (c.objective_tolerance) j["objective_tolerance"] = *c.objective_tolerance;
    return std::pair{recovery_problem_from_json(j), j.value("sweep", json::object())};
  });
  const RecoveryResult result = in_stage("recover_bound_data", [&] { return recover_bound_data(problem); });

  json sweep_json = nullptr;
  std::optional<SweepResult> sweep;
  const Candidate& best = result.best();
  if (sweep_spec.contains("kappa") || best.N() == 1) {
    const double kappa = sweep_spec.value("kappa", best.N() == 1 ? best.kappas[0] : 0.0);
    const double lo = sweep_spec.contains("m") ? sweep_spec["m"].at(0).get<double>() : problem.box.m_min;
    const double hi = sweep_spec.contains("m") ? sweep_spec["m"].at(1).get<double>() : problem.box.m_max;
    const std::size_t count = sweep_spec.value("count", std::size_t{201});
    RecoveryProblem swept = problem;
    swept.objective_tolerance = result.objective_tolerance;
    sweep = in_stage("nonuniqueness_sweep", [&] { return nonuniqueness_sweep(swept, kappa, log_spaced(lo, hi, count)); });
    sweep_json = to_json_value(*sweep);
  }

  const fs::path dir = output_dir(c);
  write_json(dir / "recovery.json", {{"provenance", provenance(c, "recover")},
                                     {"window", {problem.window.a, problem.window.b}},
                                     {"k_max", problem.k.back()},
                                     {"n_k", problem.k.size()},
                                     {"result", to_json_value(result)},
                                     {"sweep", sweep_json}});
  if (sweep) write_sweep_csv((dir / "sweep.csv").string(), *sweep);
  // the leading candidate with its bound data, ready for `verify` against the truth
  {
    const Potential v = in_stage("forward_map", [&] { return comparison_potential(problem, best); });
    json states = json::array();
    for (std::size_t j = 0; j < best.N(); ++j) states.push_back({{"kappa", best.kappas[j]}, {"m_minus", best.m_minus[j]}});
    write_json(dir / "candidate.json", {{"description", "leading candidate: window values inside, Marchenko output outside"},
                                        {"potential", to_json_value(v)},
                                        {"bound_states", states}});
  }
  std::cout << "verdict " << to_string(result.verdict) << "\n"
            << "objective tolerance " << result.objective_tolerance << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, result.candidates.size()); ++i) {
    const auto& cand = result.candidates[i];
    std::cout << "  N=" << cand.N() << " " << to_string(cand.end) << " residual " << cand.residual;
    for (std::size_t j = 0; j < cand.N(); ++j) std::cout << "  (" << cand.kappas[j] << ", " << cand.m_minus[j] << ")";
    std::cout << "\n";
  }
  if (sweep) std::cout << "sweep minima below tolerance: " << sweep->minima.size() << "\n";
  if (result.theorem_violation_suspected) {
    std::cerr << "scatter1d: recover: " << to_string(ErrorKind::TheoremViolationSuspected)
              << ": window is not absolutely continuous but the verdict is " << to_string(result.verdict) << "\n";
    return Finding;
  }
  return Pass;
}

/// One side of a verify pair: a potential, or a recovery candidate whose data is the
/// other side's L together with its own bound states.
struct PairSide {
  Potential v;
  std::optional<std::vector<BoundState>> bound_states;
};

PairSide pair_side(const json& j) {
  if (!j.contains("potential")) return {potential_from_json(j), std::nullopt};
  std::vector<BoundState> states;
  for (const auto& s : j.at("bound_states")) states.push_back({s.at("kappa").get<double>(), s.at("m_minus").get<double>(), 0.0});
  return {potential_from_json(j.at("potential")), std::move(states)};
}

int cmd_verify(const LoadedConfig& lc, const std::string& pair_path) {
  const RunConfig& c = lc.config;
  struct Pair {
    PairSide a, b;
    SpatialGrid window;
    VerifyOptions options;
  };
  const Pair pair = in_stage("input", [&] {
    const json j = read_json(pair_path);
    const fs::path base = fs::path(pair_path).parent_path();
    const auto& w = j.at("window");
    Pair p{pair_side(resolve(j.at("a"), base)), pair_side(resolve(j.at("b"), base)),
           SpatialGrid(w.at(0).get<double>(), w.at(1).get<double>(), j.value("window_n", std::size_t{201})), {}};
    require(!(p.a.bound_states && p.b.bound_states), ErrorKind::InvalidArgument,
            "at most one side of a pair may be a recovery candidate");
    auto& o = p.options;
    o.excluded = j.value("excluded", std::vector<double>{});
    o.exclusion = j.value("exclusion", 0.0);
    o.potential_tolerance = j.value("potential_tolerance", o.potential_tolerance);
    o.constancy_tolerance = j.value("constancy_tolerance", o.constancy_tolerance);
    o.identity_tolerance = j.value("identity_tolerance", o.identity_tolerance);
    o.moments.window_tolerance = j.value("window_tolerance", o.moments.window_tolerance);
    o.match.node_tolerance = j.value("node_tolerance", o.match.node_tolerance);
    o.match.prony.rank_threshold = j.value("rank_threshold", o.match.prony.rank_threshold);
    return p;
  });
  const auto kg = c.k_grid();
  auto data_of = [&](const PairSide& s, const PairSide& other) {
    if (!s.bound_states) return forward(s.v, kg, c.grid());
    ScatteringData d = forward(other.v, kg, c.grid());
    d.bound_states = *s.bound_states;
    return d;
  };
  const ScatteringData da = in_stage("forward a", [&] { return data_of(pair.a, pair.b); });
  const ScatteringData db = in_stage("forward b", [&] { return data_of(pair.b, pair.a); });
  const UniquenessReport r =
      in_stage("verify", [&] { return verify_uniqueness_pair(pair.a.v, da, pair.b.v, db, pair.window, pair.options); });
  const fs::path dir = output_dir(c);
  write_json(dir / "verify.json", {{"provenance", provenance(c, "verify")}, {"report", to_json_value(r)}});
  std::cout << (r.passed ? "pass" : "fail") << ": " << r.explanation << "\n";
  return r.passed ? Pass : Finding;
}

int cmd_catalog(const std::string& demo_dir) {
  std::cout << "potentials:\n";
  for (const auto& [name, v] : catalog::all()) std::cout << "  " << name << "  " << to_json_value(v).dump() << "\n";
  std::cout << "demo problems (" << demo_dir << "):\n";
  std::vector<fs::path> files;
  if (fs::is_directory(demo_dir))
    for (const auto& e : fs::directory_iterator(demo_dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::string about;
    try {
      about = read_json(f.string()).value("description", "");
    } catch (const Error&) {
      about = "(unreadable)";
    }
    std::cout << "  " << f.filename().string() << "  " << about << "\n";
  }
  return Pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-dimensional Schrodinger scattering: forward map, Marchenko reconstruction, bound-data recovery"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--grid-n", o.grid_n, "spatial grid point count");
  app.add_option("--kmax", o.k_max, "largest wavenumber");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { o.seed = s, o.seed_given = true; },
                                         "multistart seed");

  std::string potential_path, data_path, reference_path, problem_path, pair_path, demo_dir = SCATTER1D_DEMO_DIR;
  auto* forward_cmd = app.add_subcommand("forward", "scattering data of a potential");
  forward_cmd->add_option("potential", potential_path, "potential JSON (default: the configured catalog entry)");
  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "potential from scattering data");
  reconstruct_cmd->add_option("data", data_path, "scattering-data JSON")->required();
  reconstruct_cmd->add_option("reference", reference_path, "reference potential JSON (default: zero)");
  auto* recover_cmd = app.add_subcommand("recover", "bound data from L and the potential on a window");
  recover_cmd->add_option("problem", problem_path, "recovery problem JSON")->required();
  auto* verify_cmd = app.add_subcommand("verify", "run the uniqueness comparison on a pair of potentials");
  verify_cmd->add_option("pair", pair_path, "pair JSON")->required();
  auto* catalog_cmd = app.add_subcommand("catalog", "list catalog potentials and demo problems");
  catalog_cmd->add_option("--demos", demo_dir, "demo directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Pass : InputError;
  }

  std::string stage = "config";
  try {
    if (catalog_cmd->parsed()) return cmd_catalog(demo_dir);
    const LoadedConfig config = load_config(o);
    if (forward_cmd->parsed()) return cmd_forward(config, potential_path);
    if (reconstruct_cmd->parsed()) return cmd_reconstruct(config, data_path, reference_path);
    if (recover_cmd->parsed()) return cmd_recover(config, problem_path);
    if (verify_cmd->parsed()) return cmd_verify(config, pair_path);
  } catch (const StageError& e) {
    std::cerr << "scatter1d: " << e.stage << ": " << to_string(e.error.kind()) << ": " << e.error.what() << "\n";
    return exit_code(e.stage, e.error.kind());
  } catch (const Error& e) {
    std::cerr << "scatter1d: " << stage << ": " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(stage, e.kind());
  } catch (const std::exception& e) {
    std::cerr << "scatter1d: " << e.what() << "\n";
    return NumericalError;
  }
  return InputError;
}
