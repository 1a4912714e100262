#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "scatter1d/error.hpp"
#include "scatter1d/grid.hpp"

namespace scatter1d {

inline constexpr std::string_view version = "0.1.0";

/// Everything a batch run depends on besides its input files.
struct RunConfig {
  double x_min = -20.0;
  double x_max = 20.0;
  std::size_t n = 2001;
  double k_max = 30.0;
  std::size_t n_k = 2048;
  double unitarity_tolerance = 1e-6;
  double roundtrip_tolerance = 1e-2;
  /// Absent: the search derives it from its best residual.
  std::optional<double> objective_tolerance;
  std::string catalog = "well";
  std::string output_dir = "out";
  std::uint64_t seed = 20240917;

  SpatialGrid grid() const { return SpatialGrid(x_min, x_max, n); }
  std::vector<double> k_grid() const { return uniform_k_grid(k_max, n_k); }

  void validate() const {
    require(n >= 2 && n_k >= 2, ErrorKind::InvalidArgument, "grid counts must be at least 2");
    require(x_min < x_max, ErrorKind::InvalidArgument, "x_min must be below x_max");
    require(k_max > 0, ErrorKind::InvalidArgument, "k_max must be positive");
    require(unitarity_tolerance > 0 && roundtrip_tolerance > 0 && objective_tolerance.value_or(1.0) > 0,
            ErrorKind::InvalidArgument, "tolerances must be positive");
    require(!output_dir.empty(), ErrorKind::InvalidArgument, "output directory must be named");
  }

  bool operator==(const RunConfig&) const = default;
};

inline nlohmann::json to_json_value(const RunConfig& c) {
  return {{"x_min", c.x_min},
          {"x_max", c.x_max},
          {"n", c.n},
          {"k_max", c.k_max},
          {"n_k", c.n_k},
          {"unitarity_tolerance", c.unitarity_tolerance},
          {"roundtrip_tolerance", c.roundtrip_tolerance},
          {"objective_tolerance", c.objective_tolerance ? nlohmann::json(*c.objective_tolerance) : nlohmann::json()},
          {"catalog", c.catalog},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    require(j.is_object(), ErrorKind::ParseError, "config must be a JSON object");
    RunConfig c;
    const nlohmann::json known = to_json_value(c);
    for (const auto& [key, _] : j.items())
      require(known.contains(key), ErrorKind::ParseError, "unknown config key \"" + key + "\"");
    c.x_min = j.value("x_min", c.x_min);
    c.x_max = j.value("x_max", c.x_max);
    c.n = j.value("n", c.n);
    c.k_max = j.value("k_max", c.k_max);
    c.n_k = j.value("n_k", c.n_k);
    c.unitarity_tolerance = j.value("unitarity_tolerance", c.unitarity_tolerance);
    c.roundtrip_tolerance = j.value("roundtrip_tolerance", c.roundtrip_tolerance);
    if (j.contains("objective_tolerance") && !j.at("objective_tolerance").is_null())
      c.objective_tolerance = j.at("objective_tolerance").get<double>();
    c.catalog = j.value("catalog", c.catalog);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidArgument) throw Error(ErrorKind::ParseError, e.what());
    throw;
  }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical (sorted-key, compact) dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json_value(c).dump())));
  return buf;
}

inline nlohmann::json provenance(const RunConfig& c, std::string_view command) {
  return {{"tool", "scatter1d"}, {"version", version}, {"command", command}, {"config_hash", config_hash(c)},
          {"config", to_json_value(c)}};
}

}  // namespace scatter1d
