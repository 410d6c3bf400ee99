#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgse/core.hpp"
#include "mgse/encode.hpp"
#include "mgse/geometry.hpp"
#include "mgse/io.hpp"
#include "mgse/schedule.hpp"
#include "mgse/spectra.hpp"

namespace mgse {

using json = nlohmann::json;

/// Config rejected; `violations()` lists every problem found, not just the first.
class ConfigError : public Error {
 public:
  ConfigError(ErrorCode code, std::vector<std::string> v)
      : Error(code, join(v)), violations_(std::move(v)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid configuration:";
    for (const auto& m : v) s += "\n  " + m;
    return s;
  }
  std::vector<std::string> violations_;
};

enum class ScheduleKind { cpmg, entropy_schedule, exchange };

struct WalkSpec {
  double D0 = 2.3e-9;     // m^2/s
  double dt_max = 1e-6;   // s; encoding step is the largest grid-aligned step below this
  std::size_t n_walkers = 1000;
  Vec3 drift{0, 0, 0};    // m/s
  // Stored ensemble for msd / vacf / trajectory dump.
  std::size_t n_steps = 0;
  double dt = 1e-6;
  std::size_t trajectory_walkers = 0;
  double vacf_window = 0;  // s; 0 uses the whole trajectory
  friend bool operator==(const WalkSpec&, const WalkSpec&) = default;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::cpmg;
  std::vector<double> echo_times;  // cpmg sweep, s
  double total_time = 55e-3;       // s
  std::size_t cycles = 20;         // entropy schedule
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

struct PopulationSpec {
  std::string name = "population";
  double weight = 1;
  double T2 = infinity;
  std::optional<Geometry> geometry;  // defaults to the run geometry
  std::optional<double> D0;
  std::optional<std::size_t> n_walkers;
  std::optional<double> dt_max;
  friend bool operator==(const PopulationSpec&, const PopulationSpec&) = default;
};

struct InversionSpec {
  double lambda = -1;  // < 0 selects by discrepancy principle
  std::size_t grid_points = 64;
  std::size_t pencil_L = 0;  // 0 selects N/3
  double pencil_cutoff = 1e-8;
  friend bool operator==(const InversionSpec&, const InversionSpec&) = default;
};

struct SpectrumSpec {
  std::string type = "flat";  // flat | lorentzian
  double D0 = 2.3e-9;
  double nu_c = 0;  // Hz
  friend bool operator==(const SpectrumSpec&, const SpectrumSpec&) = default;
};

struct ExchangeSpec {
  std::vector<double> echo_times_1, echo_times_2;
  double block_time = 55e-3;
  std::vector<double> t_mix{1e-3, 10e-3};
  std::string model = "two_site";  // two_site | geometry
  std::array<double, 2> p{0.5, 0.5};
  double k = 500;
  std::array<double, 2> T2{infinity, infinity};
  std::array<SpectrumSpec, 2> spectra{SpectrumSpec{"flat", 2.3e-9, 0}, SpectrumSpec{"lorentzian", 2.3e-9, 6000}};
  std::size_t walkers_per_cell = 100000;
  bool shared_sample = true;
  bool sampled_phases = false;
  double lambda = 1e-3;
  double nu_split = 1500;
  std::vector<double> nu_grid;  // empty: default grid
  friend bool operator==(const ExchangeSpec&, const ExchangeSpec&) = default;
};

struct EntropySpec {
  EntropyReference reference = EntropyReference::first_block;
  friend bool operator==(const EntropySpec&, const EntropySpec&) = default;
};

struct InputSpec {
  std::vector<std::string> echo_csv;  // ingested instead of simulating
  double echo_time_hint = 0;
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  PhysicalConstants constants{};
  GradientSpec gradient{{0, 0, 7}};
  Geometry geometry = FreeSpace{};
  WalkSpec walk{};
  ScheduleSpec schedule{};
  std::vector<PopulationSpec> populations;
  NoiseSpec noise{};
  std::vector<std::string> analysis;
  InversionSpec inversion{};
  ExchangeSpec exchange{};
  EntropySpec entropy{};
  InputSpec inputs{};
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline const std::set<std::string> analysis_names{"msd",   "vacf",   "trajectory",   "otoc",        "spectrum",
                                                  "lyapunov", "t2",  "pencil",       "entropy",     "exchange_map",
                                                  "two_time"};

/// Instrument settings: 7 T/m, t_E 55..1100 us in 20 steps at 55 ms, 128 scans.
inline json instrument_preset() {
  return json{
      {"gradient", {{"G", {0.0, 0.0, 7.0}}}},
      {"schedule", {{"kind", "cpmg"}, {"sweep", {{"lo", 55e-6}, {"hi", 1100e-6}, {"steps", 20}}}, {"total_time", 55e-3}}},
      {"noise", {{"transients", 128}}},
      {"exchange",
       {{"sweep_1", {{"lo", 55e-6}, {"hi", 1100e-6}, {"steps", 20}}},
        {"sweep_2", {{"lo", 55e-6}, {"hi", 1100e-6}, {"steps", 20}}},
        {"block_time", 55e-3},
        {"t_mix", {0.5e-3, 1e-3, 2e-3, 5e-3, 10e-3}}}},
      {"entropy", {{"cycles", 20}}},
  };
}

namespace detail {

class Reader {
 public:
  std::vector<std::string> violations;

  void unknown_keys(const json& j, const std::string& path, std::initializer_list<const char*> known) {
    if (!j.is_object()) return;
    for (const auto& [k, v] : j.items()) {
      bool ok = false;
      for (const char* n : known) ok = ok || k == n;
      if (!ok) violations.push_back(path + k + ": unknown field");
    }
  }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    violations.push_back(path + ": must be an object");
    return false;
  }

  double number(const json& j, const char* key, const std::string& path, double def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (v.is_null()) return infinity;
    if (v.is_string() && (v == "inf" || v == "infinity")) return infinity;
    if (!v.is_number()) {
      violations.push_back(path + key + ": must be a number");
      return def;
    }
    return v.get<double>();
  }

  std::size_t count(const json& j, const char* key, const std::string& path, std::size_t def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      violations.push_back(path + key + ": must be a non-negative integer");
      return def;
    }
    return v.get<std::size_t>();
  }

  bool boolean(const json& j, const char* key, const std::string& path, bool def) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_boolean()) {
      violations.push_back(path + key + ": must be true or false");
      return def;
    }
    return j.at(key).get<bool>();
  }

  std::string text(const json& j, const char* key, const std::string& path, const std::string& def) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_string()) {
      violations.push_back(path + key + ": must be a string");
      return def;
    }
    return j.at(key).get<std::string>();
  }

  Vec3 vec3(const json& j, const char* key, const std::string& path, Vec3 def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
      violations.push_back(path + key + ": must be an array of three numbers");
      return def;
    }
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  }

  std::vector<double> numbers(const json& j, const char* key, const std::string& path, std::vector<double> def) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_array()) {
      violations.push_back(path + key + ": must be an array of numbers");
      return def;
    }
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) {
        violations.push_back(path + key + ": must be an array of numbers");
        return def;
      }
      out.push_back(x.get<double>());
    }
    return out;
  }

  // Either an explicit list `key` or a linear sweep object `sweep_key`.
  std::vector<double> times(const json& j, const char* key, const char* sweep_key, const std::string& path,
                            std::vector<double> def) {
    if (j.contains(key)) return numbers(j, key, path, def);
    if (!j.contains(sweep_key)) return def;
    const auto& s = j.at(sweep_key);
    const std::string sp = path + sweep_key + ".";
    if (!object(s, path + sweep_key)) return def;
    unknown_keys(s, sp, {"lo", "hi", "steps"});
    const double lo = number(s, "lo", sp, 55e-6), hi = number(s, "hi", sp, 1100e-6);
    const std::size_t n = count(s, "steps", sp, 20);
    if (!(lo > 0 && hi > lo && n >= 2)) {
      violations.push_back(path + sweep_key + ": need 0 < lo < hi and steps >= 2");
      return def;
    }
    return echo_time_sweep(lo, hi, n);
  }

  Axis axis(const json& j, const char* key, const std::string& path, Axis def) {
    const std::string s = text(j, key, path, std::string(to_string(def)));
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    violations.push_back(path + key + ": must be x, y or z");
    return def;
  }

  SiteGeometry site(const json& j, const std::string& path) {
    if (!object(j, path)) return FreeSpace{};
    const std::string p = path + ".";
    const std::string type = text(j, "type", p, "free");
    if (type == "free") {
      unknown_keys(j, p, {"type"});
      return FreeSpace{};
    }
    if (type == "slab") {
      unknown_keys(j, p, {"type", "width", "normal"});
      return Slab{number(j, "width", p, 0), axis(j, "normal", p, Axis::z)};
    }
    if (type == "cylinder") {
      unknown_keys(j, p, {"type", "radius", "axis"});
      return Cylinder{number(j, "radius", p, 0), axis(j, "axis", p, Axis::z)};
    }
    if (type == "sphere") {
      unknown_keys(j, p, {"type", "radius"});
      return Sphere{number(j, "radius", p, 0)};
    }
    if (type == "cage_lattice") {
      unknown_keys(j, p, {"type", "small_cage_diameter", "large_cage_diameter", "window_diameter", "period"});
      return CageLattice{number(j, "small_cage_diameter", p, 0), number(j, "large_cage_diameter", p, 0),
                         number(j, "window_diameter", p, 0), number(j, "period", p, 0)};
    }
    violations.push_back(p + "type: unknown geometry '" + type + "'");
    return FreeSpace{};
  }

  Geometry geometry(const json& j, const std::string& path) {
    if (j.is_object() && j.value("type", "") == "two_site") {
      const std::string p = path + ".";
      unknown_keys(j, p, {"type", "sites", "jump_rate", "weights"});
      TwoSite t;
      if (!j.contains("sites") || !j.at("sites").is_array() || j.at("sites").size() != 2) {
        violations.push_back(p + "sites: must be an array of two site geometries");
      } else {
        t.sites[0] = site(j.at("sites")[0], p + "sites[0]");
        t.sites[1] = site(j.at("sites")[1], p + "sites[1]");
      }
      t.jump_rate = number(j, "jump_rate", p, 0);
      const auto w = numbers(j, "weights", p, {0.5, 0.5});
      if (w.size() == 2)
        t.weights = {w[0], w[1]};
      else
        violations.push_back(p + "weights: must hold two numbers");
      Geometry g = t;
      for (const auto& m : mgse::violations(g)) violations.push_back(path + ": " + m);
      return g;
    }
    SiteGeometry s = site(j, path);
    Geometry g = std::visit([](const auto& v) -> Geometry { return v; }, s);
    for (const auto& m : mgse::violations(g)) violations.push_back(path + ": " + m);
    return g;
  }
};

inline json number_or_inf(double v) { return std::isinf(v) ? json("inf") : json(v); }

inline json site_json(const SiteGeometry& g) {
  return std::visit(overloaded{
                        [](const FreeSpace&) { return json{{"type", "free"}}; },
                        [](const Slab& s) {
                          return json{{"type", "slab"}, {"width", s.width}, {"normal", to_string(s.normal)}};
                        },
                        [](const Cylinder& c) {
                          return json{{"type", "cylinder"}, {"radius", c.radius}, {"axis", to_string(c.axis)}};
                        },
                        [](const Sphere& s) { return json{{"type", "sphere"}, {"radius", s.radius}}; },
                        [](const CageLattice& c) {
                          return json{{"type", "cage_lattice"},
                                      {"small_cage_diameter", c.small_cage_diameter},
                                      {"large_cage_diameter", c.large_cage_diameter},
                                      {"window_diameter", c.window_diameter},
                                      {"period", c.period}};
                        },
                    },
                    g);
}

inline json geometry_json(const Geometry& g) {
  if (const auto* t = std::get_if<TwoSite>(&g))
    return json{{"type", "two_site"},
                {"sites", {site_json(t->sites[0]), site_json(t->sites[1])}},
                {"jump_rate", t->jump_rate},
                {"weights", {t->weights[0], t->weights[1]}}};
  return site_json(as_site(g));
}

inline const char* kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::cpmg: return "cpmg";
    case ScheduleKind::entropy_schedule: return "entropy_schedule";
    case ScheduleKind::exchange: return "exchange";
  }
  return "cpmg";
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  using detail::number_or_inf;
  json pops = json::array();
  for (const auto& p : c.populations) {
    json j{{"name", p.name}, {"weight", p.weight}, {"T2", number_or_inf(p.T2)}};
    if (p.geometry) j["geometry"] = detail::geometry_json(*p.geometry);
    if (p.D0) j["D0"] = *p.D0;
    if (p.n_walkers) j["n_walkers"] = *p.n_walkers;
    if (p.dt_max) j["dt_max"] = *p.dt_max;
    pops.push_back(j);
  }
  const auto& x = c.exchange;
  json spectra = json::array();
  for (const auto& s : x.spectra) spectra.push_back({{"type", s.type}, {"D0", s.D0}, {"nu_c", s.nu_c}});
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"constants", {{"gamma", c.constants.gamma}}},
      {"gradient", {{"G", c.gradient.G}}},
      {"geometry", detail::geometry_json(c.geometry)},
      {"walk",
       {{"D0", c.walk.D0},
        {"dt_max", c.walk.dt_max},
        {"n_walkers", c.walk.n_walkers},
        {"drift", c.walk.drift},
        {"n_steps", c.walk.n_steps},
        {"dt", c.walk.dt},
        {"trajectory_walkers", c.walk.trajectory_walkers},
        {"vacf_window", c.walk.vacf_window}}},
      {"schedule",
       {{"kind", detail::kind_name(c.schedule.kind)},
        {"echo_times", c.schedule.echo_times},
        {"total_time", c.schedule.total_time},
        {"cycles", c.schedule.cycles}}},
      {"populations", pops},
      {"noise",
       {{"sigma", c.noise.sigma},
        {"transients", c.noise.transients},
        {"offset", c.noise.offset},
        {"phase_cycling", c.noise.phase_cycling}}},
      {"analysis", c.analysis},
      {"inversion",
       {{"lambda", c.inversion.lambda},
        {"grid_points", c.inversion.grid_points},
        {"pencil_L", c.inversion.pencil_L},
        {"pencil_cutoff", c.inversion.pencil_cutoff}}},
      {"exchange",
       {{"echo_times_1", x.echo_times_1},
        {"echo_times_2", x.echo_times_2},
        {"block_time", x.block_time},
        {"t_mix", x.t_mix},
        {"model", x.model},
        {"p", x.p},
        {"k", x.k},
        {"T2", {number_or_inf(x.T2[0]), number_or_inf(x.T2[1])}},
        {"spectra", spectra},
        {"walkers_per_cell", x.walkers_per_cell},
        {"shared_sample", x.shared_sample},
        {"sampled_phases", x.sampled_phases},
        {"lambda", x.lambda},
        {"nu_split", x.nu_split},
        {"nu_grid", x.nu_grid}}},
      {"entropy",
       {{"reference", c.entropy.reference == EntropyReference::first_block ? "first_block" : "first_at_frequency"}}},
      {"inputs", {{"echo_csv", c.inputs.echo_csv}, {"echo_time_hint", c.inputs.echo_time_hint}}},
  };
}

/// Validated config from a JSON document. `seed_override` counts as the seed
/// when the document has none.
inline RunConfig parse_config(json j, std::optional<std::uint64_t> seed_override = std::nullopt) {
  detail::Reader r;
  auto& v = r.violations;
  if (!j.is_object()) throw ConfigError(ErrorCode::validation_error, {"top level must be an object"});
  if (j.contains("preset")) {
    const auto& p = j.at("preset");
    if (p == "instrument") {
      json base = instrument_preset();
      j.erase("preset");
      base.merge_patch(j);
      j = std::move(base);
    } else {
      v.push_back("preset: unknown preset " + p.dump());
      j.erase("preset");
    }
  }
  r.unknown_keys(j, "", {"seed", "output_dir", "constants", "gradient", "geometry", "walk", "schedule", "populations",
                         "noise", "analysis", "inversion", "exchange", "entropy", "inputs"});
  const json empty = json::object();
  auto section = [&](const char* key) -> const json& {
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) {
      v.push_back(std::string(key) + ": must be an object");
      return empty;
    }
    return j.at(key);
  };

  RunConfig c;
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (s.is_number_unsigned())
      c.seed = s.get<std::uint64_t>();
    else if (s.is_number_integer() && s.get<long long>() >= 0)
      c.seed = static_cast<std::uint64_t>(s.get<long long>());
    else
      v.push_back("seed: must be a non-negative 64-bit integer");
  } else if (!seed_override) {
    v.push_back("seed: required field is missing");
  }
  if (seed_override) c.seed = *seed_override;
  c.output_dir = r.text(j, "output_dir", "", c.output_dir);

  const json& cs = section("constants");
  r.unknown_keys(cs, "constants.", {"gamma"});
  c.constants.gamma = r.number(cs, "gamma", "constants.", proton_gamma);
  if (!(c.constants.gamma > 0)) v.push_back("constants.gamma: must be positive");

  const json& gs = section("gradient");
  r.unknown_keys(gs, "gradient.", {"G"});
  c.gradient.G = r.vec3(gs, "G", "gradient.", c.gradient.G);
  for (double x : c.gradient.G)
    if (!std::isfinite(x)) v.push_back("gradient.G: components must be finite");

  if (j.contains("geometry")) c.geometry = r.geometry(j.at("geometry"), "geometry");

  const json& ws = section("walk");
  r.unknown_keys(ws, "walk.", {"D0", "dt_max", "n_walkers", "drift", "n_steps", "dt", "trajectory_walkers", "vacf_window"});
  c.walk.D0 = r.number(ws, "D0", "walk.", c.walk.D0);
  c.walk.dt_max = r.number(ws, "dt_max", "walk.", c.walk.dt_max);
  c.walk.n_walkers = r.count(ws, "n_walkers", "walk.", c.walk.n_walkers);
  c.walk.drift = r.vec3(ws, "drift", "walk.", c.walk.drift);
  c.walk.n_steps = r.count(ws, "n_steps", "walk.", c.walk.n_steps);
  c.walk.dt = r.number(ws, "dt", "walk.", c.walk.dt);
  c.walk.trajectory_walkers = r.count(ws, "trajectory_walkers", "walk.", c.walk.trajectory_walkers);
  c.walk.vacf_window = r.number(ws, "vacf_window", "walk.", 0);
  {
    WalkParams wp{c.walk.D0, c.walk.dt, c.walk.n_steps, c.walk.n_walkers, c.seed, c.walk.drift};
    for (const auto& m : violations(wp)) v.push_back("walk: " + m);
    if (!(c.walk.dt_max > 0)) v.push_back("walk: dt_max must be positive");
    if (c.walk.vacf_window < 0) v.push_back("walk: vacf_window must be non-negative");
  }

  const json& ss = section("schedule");
  r.unknown_keys(ss, "schedule.", {"kind", "echo_times", "sweep", "total_time", "cycles"});
  {
    const std::string kind = r.text(ss, "kind", "schedule.", "cpmg");
    if (kind == "cpmg")
      c.schedule.kind = ScheduleKind::cpmg;
    else if (kind == "entropy_schedule")
      c.schedule.kind = ScheduleKind::entropy_schedule;
    else if (kind == "exchange")
      c.schedule.kind = ScheduleKind::exchange;
    else
      v.push_back("schedule.kind: must be cpmg, entropy_schedule or exchange");
    c.schedule.echo_times = r.times(ss, "echo_times", "sweep", "schedule.", {110e-6});
    c.schedule.total_time = r.number(ss, "total_time", "schedule.", c.schedule.total_time);
    c.schedule.cycles = r.count(ss, "cycles", "schedule.", c.schedule.cycles);
    if (const json& es = section("entropy"); es.contains("cycles"))
      c.schedule.cycles = r.count(es, "cycles", "entropy.", c.schedule.cycles);
    if (!(c.schedule.total_time > 0)) v.push_back("schedule.total_time: must be positive");
    for (double t : c.schedule.echo_times)
      if (!(t > 0) || t > c.schedule.total_time) {
        v.push_back("schedule.echo_times: each echo time must satisfy 0 < t_E <= total_time");
        break;
      }
    if (c.schedule.cycles == 0) v.push_back("schedule.cycles: must be at least 1");
  }

  if (j.contains("populations")) {
    const auto& ps = j.at("populations");
    if (!ps.is_array()) {
      v.push_back("populations: must be an array");
    } else {
      double sum = 0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string p = "populations[" + std::to_string(i) + "].";
        const auto& pj = ps[i];
        if (!r.object(pj, p.substr(0, p.size() - 1))) continue;
        r.unknown_keys(pj, p, {"name", "weight", "T2", "geometry", "D0", "n_walkers", "dt_max"});
        PopulationSpec s;
        s.name = r.text(pj, "name", p, "population" + std::to_string(i));
        s.weight = r.number(pj, "weight", p, 1.0);
        s.T2 = r.number(pj, "T2", p, infinity);
        if (pj.contains("geometry")) s.geometry = r.geometry(pj.at("geometry"), p + "geometry");
        if (pj.contains("D0")) s.D0 = r.number(pj, "D0", p, c.walk.D0);
        if (pj.contains("n_walkers")) s.n_walkers = r.count(pj, "n_walkers", p, c.walk.n_walkers);
        if (pj.contains("dt_max")) s.dt_max = r.number(pj, "dt_max", p, c.walk.dt_max);
        if (!(s.weight >= 0)) v.push_back(p + "weight: must be non-negative");
        if (!(s.T2 > 0)) v.push_back(p + "T2: must be positive");
        if (s.D0 && !(*s.D0 > 0)) v.push_back(p + "D0: D0 must be positive");
        if (s.n_walkers && *s.n_walkers == 0) v.push_back(p + "n_walkers: must be at least 1");
        if (s.dt_max && !(*s.dt_max > 0)) v.push_back(p + "dt_max: must be positive");
        sum += s.weight;
        c.populations.push_back(std::move(s));
      }
      if (!c.populations.empty() && c.schedule.kind == ScheduleKind::cpmg && std::abs(sum - 1) > 1e-9)
        v.push_back("populations: weights must sum to 1");
    }
  }

  const json& ns = section("noise");
  r.unknown_keys(ns, "noise.", {"sigma", "transients", "offset", "phase_cycling"});
  c.noise.sigma = r.number(ns, "sigma", "noise.", 0);
  c.noise.transients = r.count(ns, "transients", "noise.", 1);
  c.noise.offset = r.number(ns, "offset", "noise.", 0);
  c.noise.phase_cycling = r.boolean(ns, "phase_cycling", "noise.", true);
  if (!(c.noise.sigma >= 0)) v.push_back("noise.sigma: must be non-negative");
  if (c.noise.transients == 0) v.push_back("noise.transients: must be at least 1");

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    if (!a.is_array()) {
      v.push_back("analysis: must be an array of names");
    } else {
      for (const auto& x : a) {
        if (!x.is_string() || !analysis_names.count(x.get<std::string>())) {
          v.push_back("analysis: unknown selection " + x.dump());
          continue;
        }
        c.analysis.push_back(x.get<std::string>());
      }
    }
  }

  const json& is = section("inversion");
  r.unknown_keys(is, "inversion.", {"lambda", "grid_points", "pencil_L", "pencil_cutoff"});
  c.inversion.lambda = r.number(is, "lambda", "inversion.", -1);
  c.inversion.grid_points = r.count(is, "grid_points", "inversion.", 64);
  c.inversion.pencil_L = r.count(is, "pencil_L", "inversion.", 0);
  c.inversion.pencil_cutoff = r.number(is, "pencil_cutoff", "inversion.", 1e-8);
  if (c.inversion.grid_points < 2) v.push_back("inversion.grid_points: must be at least 2");
  if (!(c.inversion.pencil_cutoff > 0)) v.push_back("inversion.pencil_cutoff: must be positive");

  const json& xs = section("exchange");
  r.unknown_keys(xs, "exchange.", {"echo_times_1", "echo_times_2", "sweep_1", "sweep_2", "block_time", "t_mix", "model", "p",
                                   "k", "T2", "spectra", "walkers_per_cell", "shared_sample", "sampled_phases", "lambda",
                                   "nu_split", "nu_grid"});
  {
    auto& x = c.exchange;
    const auto sweep = echo_time_sweep();
    x.echo_times_1 = r.times(xs, "echo_times_1", "sweep_1", "exchange.", sweep);
    x.echo_times_2 = r.times(xs, "echo_times_2", "sweep_2", "exchange.", sweep);
    x.block_time = r.number(xs, "block_time", "exchange.", x.block_time);
    x.t_mix = r.numbers(xs, "t_mix", "exchange.", x.t_mix);
    x.model = r.text(xs, "model", "exchange.", x.model);
    const auto p = r.numbers(xs, "p", "exchange.", {0.5, 0.5});
    if (p.size() == 2) x.p = {p[0], p[1]};
    else v.push_back("exchange.p: must hold two numbers");
    x.k = r.number(xs, "k", "exchange.", x.k);
    if (xs.contains("T2")) {
      const auto& t = xs.at("T2");
      if (t.is_array() && t.size() == 2) {
        json wrap{{"a", t[0]}, {"b", t[1]}};
        x.T2 = {r.number(wrap, "a", "exchange.T2.", infinity), r.number(wrap, "b", "exchange.T2.", infinity)};
      } else {
        v.push_back("exchange.T2: must hold two values");
      }
    }
    if (xs.contains("spectra")) {
      const auto& sp = xs.at("spectra");
      if (!sp.is_array() || sp.size() != 2) {
        v.push_back("exchange.spectra: must hold two site spectra");
      } else {
        for (int i = 0; i < 2; ++i) {
          const std::string path = "exchange.spectra[" + std::to_string(i) + "].";
          if (!r.object(sp[i], path.substr(0, path.size() - 1))) continue;
          r.unknown_keys(sp[i], path, {"type", "D0", "nu_c"});
          SpectrumSpec s;
          s.type = r.text(sp[i], "type", path, "flat");
          s.D0 = r.number(sp[i], "D0", path, 2.3e-9);
          s.nu_c = r.number(sp[i], "nu_c", path, 0);
          if (s.type != "flat" && s.type != "lorentzian") v.push_back(path + "type: must be flat or lorentzian");
          if (!(s.D0 >= 0)) v.push_back(path + "D0: must be non-negative");
          if (s.type == "lorentzian" && !(s.nu_c > 0)) v.push_back(path + "nu_c: must be positive");
          x.spectra[static_cast<std::size_t>(i)] = s;
        }
      }
    }
    x.walkers_per_cell = r.count(xs, "walkers_per_cell", "exchange.", x.walkers_per_cell);
    x.shared_sample = r.boolean(xs, "shared_sample", "exchange.", x.shared_sample);
    x.sampled_phases = r.boolean(xs, "sampled_phases", "exchange.", x.sampled_phases);
    x.lambda = r.number(xs, "lambda", "exchange.", x.lambda);
    x.nu_split = r.number(xs, "nu_split", "exchange.", x.nu_split);
    x.nu_grid = r.numbers(xs, "nu_grid", "exchange.", {});
    if (x.model != "two_site" && x.model != "geometry") v.push_back("exchange.model: must be two_site or geometry");
    if (!(x.block_time > 0)) v.push_back("exchange.block_time: must be positive");
    if (x.t_mix.empty()) v.push_back("exchange.t_mix: needs at least one mixing time");
    for (double t : x.t_mix)
      if (!(t >= 0)) v.push_back("exchange.t_mix: mixing times must be non-negative");
    for (const auto* ts : {&x.echo_times_1, &x.echo_times_2})
      for (double t : *ts)
        if (!(t > 0) || t > x.block_time) {
          v.push_back("exchange: echo times must satisfy 0 < t_E <= block_time");
          break;
        }
    if (!(x.p[0] >= 0 && x.p[1] >= 0 && std::abs(x.p[0] + x.p[1] - 1) <= 1e-9))
      v.push_back("exchange.p: populations must be non-negative and sum to 1");
    if (!(x.k >= 0)) v.push_back("exchange.k: must be non-negative");
    if (x.walkers_per_cell == 0) v.push_back("exchange.walkers_per_cell: must be at least 1");
    if (!(x.lambda >= 0)) v.push_back("exchange.lambda: must be non-negative");
    if (!(x.nu_split > 0)) v.push_back("exchange.nu_split: must be positive");
  }

  const json& es = section("entropy");
  r.unknown_keys(es, "entropy.", {"reference", "cycles"});
  {
    const std::string ref = r.text(es, "reference", "entropy.", "first_block");
    if (ref == "first_block")
      c.entropy.reference = EntropyReference::first_block;
    else if (ref == "first_at_frequency")
      c.entropy.reference = EntropyReference::first_at_frequency;
    else
      v.push_back("entropy.reference: must be first_block or first_at_frequency");
  }

  const json& in = section("inputs");
  r.unknown_keys(in, "inputs.", {"echo_csv", "echo_time_hint"});
  if (in.contains("echo_csv")) {
    const auto& e = in.at("echo_csv");
    if (e.is_array() && std::all_of(e.begin(), e.end(), [](const json& s) { return s.is_string(); }))
      c.inputs.echo_csv = e.get<std::vector<std::string>>();
    else
      v.push_back("inputs.echo_csv: must be an array of paths");
  }
  c.inputs.echo_time_hint = r.number(in, "echo_time_hint", "inputs.", 0);

  // Cross-checks against the step guard.
  if (v.empty() && c.schedule.kind != ScheduleKind::exchange) {
    try {
      double dt_largest = 0;
      for (double t : c.schedule.echo_times) dt_largest = std::max(dt_largest, coerce_dt(t, c.walk.dt_max));
      if (c.populations.empty()) check_step(c.walk.D0, dt_largest, c.geometry);
      for (const auto& p : c.populations) {
        double dl = 0;
        for (double t : c.schedule.echo_times) dl = std::max(dl, coerce_dt(t, p.dt_max.value_or(c.walk.dt_max)));
        check_step(p.D0.value_or(c.walk.D0), dl, p.geometry.value_or(c.geometry));
      }
      if (c.walk.n_steps > 0) check_step(c.walk.D0, c.walk.dt, c.geometry);
    } catch (const Error& e) {
      v.push_back(std::string("walk: ") + e.what());
    }
  }

  if (!v.empty()) throw ConfigError(ErrorCode::validation_error, v);
  return c;
}

inline RunConfig parse_config_text(const std::string& text, std::optional<std::uint64_t> seed_override = std::nullopt) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports "... at line L, column C: ..."
    fail(ErrorCode::parse_error, std::string("config parse error: ") + e.what());
  }
  return parse_config(std::move(j), seed_override);
}

inline RunConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::io_error, "config file not found: " + path.string());
  return parse_config_text(io::read_file(path), seed_override);
}

inline std::string serialize(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// Hash of the canonical serialisation.
inline std::string config_hash(const RunConfig& c) { return io::sha256(to_json(c).dump()); }

}  // namespace mgse
