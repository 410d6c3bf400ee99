#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mgse/config.hpp"
#include "mgse/encode.hpp"
#include "mgse/exchange.hpp"
#include "mgse/inversion.hpp"
#include "mgse/io.hpp"
#include "mgse/spectra.hpp"
#include "mgse/walk.hpp"

#ifndef MGSE_VERSION
#define MGSE_VERSION "0.0.0"
#endif

namespace mgse {

namespace fs = std::filesystem;

enum class Verb { simulate, analyze, invert, exchange, entropy, pipeline };

inline const char* to_string(Verb v) {
  switch (v) {
    case Verb::simulate: return "simulate";
    case Verb::analyze: return "analyze";
    case Verb::invert: return "invert";
    case Verb::exchange: return "exchange";
    case Verb::entropy: return "entropy";
    case Verb::pipeline: return "pipeline";
  }
  return "pipeline";
}

inline Verb parse_verb(const std::string& s) {
  for (Verb v : {Verb::simulate, Verb::analyze, Verb::invert, Verb::exchange, Verb::entropy, Verb::pipeline})
    if (s == to_string(v)) return v;
  fail(ErrorCode::invalid_argument, "unknown verb '" + s + "'");
}

struct FileRecord {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::size_t bytes = 0;
  std::string stage;
};

struct StageRecord {
  std::string name;
  double seconds = 0;
  bool completed = false;
};

struct RunManifest {
  std::string version = MGSE_VERSION;
  std::string verb;
  std::string config_hash;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  fs::path output_dir;
  std::vector<StageRecord> stages;
  std::vector<FileRecord> files;
  Flags warnings;
  std::string error;  // empty unless a stage failed

  bool failed() const { return !error.empty(); }
  int exit_code() const { return failed() ? 1 : (warnings.empty() ? 0 : 2); }
  std::string status() const { return failed() ? "failed" : (warnings.empty() ? "ok" : "warnings"); }

  /// Checksums of every emitted file, keyed by path. Timings excluded.
  std::vector<std::pair<std::string, std::string>> checksums() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : files) out.emplace_back(f.path, f.sha256);
    std::sort(out.begin(), out.end());
    return out;
  }

  json to_json() const {
    json st = json::array(), fl = json::array(), done = json::array();
    for (const auto& s : stages) {
      st.push_back({{"name", s.name}, {"seconds", s.seconds}, {"completed", s.completed}});
      if (s.completed) done.push_back(s.name);
    }
    for (const auto& f : files) fl.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}, {"stage", f.stage}});
    json j{{"toolkit_version", version}, {"verb", verb},          {"config_sha256", config_hash},
           {"seed", seed},               {"threads", threads},    {"status", status()},
           {"exit_code", exit_code()},   {"stages", st},          {"completed_stages", done},
           {"files", fl},                {"warnings", warnings}};
    if (failed()) j["error"] = error;
    return j;
  }
};

struct RunOptions {
  Verb verb = Verb::pipeline;
  std::optional<fs::path> out;  // overrides the config output_dir
  Execution exec{};
};

/// --out wins; otherwise a relative output_dir lands under $MGSE_OUTPUT_ROOT when set.
inline fs::path resolve_output_dir(const RunConfig& c, const std::optional<fs::path>& out) {
  if (out) return *out;
  fs::path p = c.output_dir;
  if (p.is_relative())
    if (const char* root = std::getenv("MGSE_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

namespace detail {

inline std::string padded(std::size_t i, std::size_t n) {
  std::string s = std::to_string(i);
  const std::size_t w = std::to_string(n > 0 ? n - 1 : 0).size();
  return std::string(w > s.size() ? w - s.size() : 0, '0') + s;
}

inline Axis gradient_axis(const GradientSpec& g) {
  int best = 2;
  for (int i = 0; i < 3; ++i)
    if (std::abs(g.G[i]) > std::abs(g.G[best])) best = i;
  return static_cast<Axis>(best);
}

struct PopulationRun {
  std::string name;
  double weight = 1;
  double T2 = infinity;
  Geometry geometry;
  double D0 = 0;
  std::size_t n_walkers = 0;
  double dt_max = 0;
};

inline std::vector<PopulationRun> populations(const RunConfig& c) {
  std::vector<PopulationRun> out;
  if (c.populations.empty()) {
    out.push_back({"sample", 1, infinity, c.geometry, c.walk.D0, c.walk.n_walkers, c.walk.dt_max});
    return out;
  }
  for (const auto& p : c.populations)
    out.push_back({p.name, p.weight, p.T2, p.geometry.value_or(c.geometry), p.D0.value_or(c.walk.D0),
                   p.n_walkers.value_or(c.walk.n_walkers), p.dt_max.value_or(c.walk.dt_max)});
  return out;
}

inline TwoSiteModel two_site_model(const ExchangeSpec& x) {
  TwoSiteModel m;
  m.p = x.p;
  m.k = x.k;
  m.T2 = x.T2;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& s = x.spectra[i];
    if (s.type == "lorentzian")
      m.spectra[i] = LorentzianSpectrum{s.D0, s.nu_c};
    else
      m.spectra[i] = FlatSpectrum{s.D0};
  }
  return m;
}

class Run {
 public:
  Run(const RunConfig& c, const RunOptions& o, RunManifest& m) : c_(c), o_(o), m_(m), dir_(m.output_dir) {}

  void execute() {
    kind_ = o_.verb == Verb::exchange  ? ScheduleKind::exchange
            : o_.verb == Verb::entropy ? ScheduleKind::entropy_schedule
                                       : c_.schedule.kind;
    select();
    stage("config", [&] { emit("config.json", json_text(to_json(c_))); });
    if (c_.walk.n_steps > 0 && (c_.walk.trajectory_walkers > 0 || any({"msd", "vacf", "trajectory"}) ||
                                (want("spectrum") && kind_ == ScheduleKind::cpmg)))
      stage("walk", [&] { walk(); });
    if (kind_ == ScheduleKind::cpmg) {
      stage("simulate", [&] { simulate_cpmg(); });
      if (any({"otoc", "spectrum", "lyapunov"})) stage("analyze", [&] { analyze_cpmg(); });
      if (any({"t2", "pencil"})) stage("invert", [&] { invert(); });
    } else if (kind_ == ScheduleKind::entropy_schedule) {
      stage("simulate", [&] { simulate_entropy(); });
      if (want("entropy")) stage("entropy", [&] { analyze_entropy(); });
    } else {
      stage("simulate", [&] { simulate_exchange(); });
      if (any({"exchange_map", "two_time"})) stage("exchange", [&] { analyze_exchange(); });
    }
  }

 private:
  static std::string json_text(const json& j) { return io::json_text(j); }

  // Selections in effect for this verb, warning on ones that cannot apply.
  void select() {
    static const std::map<ScheduleKind, std::set<std::string>> applies{
        {ScheduleKind::cpmg, {"msd", "vacf", "trajectory", "otoc", "spectrum", "lyapunov", "t2", "pencil"}},
        {ScheduleKind::entropy_schedule, {"msd", "vacf", "trajectory", "entropy"}},
        {ScheduleKind::exchange, {"msd", "vacf", "trajectory", "exchange_map", "two_time"}}};
    std::set<std::string> requested(c_.analysis.begin(), c_.analysis.end());
    auto defaults = [&](std::set<std::string> d) {
      std::set<std::string> hit;
      for (const auto& s : requested)
        if (d.count(s)) hit.insert(s);
      return hit.empty() ? d : hit;
    };
    switch (o_.verb) {
      case Verb::simulate: requested.clear(); break;
      case Verb::pipeline: break;
      case Verb::analyze:
        if (requested.empty())
          requested = kind_ == ScheduleKind::cpmg               ? std::set<std::string>{"otoc", "spectrum"}
                      : kind_ == ScheduleKind::entropy_schedule ? std::set<std::string>{"entropy"}
                                                                : std::set<std::string>{"exchange_map"};
        break;
      case Verb::invert:
        requested = kind_ == ScheduleKind::exchange ? std::set<std::string>{"exchange_map"} : defaults({"t2", "pencil"});
        break;
      case Verb::exchange: requested = defaults({"exchange_map", "two_time"}); break;
      case Verb::entropy: requested = {"entropy"}; break;
    }
    for (const auto& s : requested) {
      if (applies.at(kind_).count(s))
        selected_.insert(s);
      else
        m_.warnings.push_back("analysis '" + s + "' does not apply to schedule kind '" + kind_name(kind_) + "'; skipped");
    }
    if ((selected_.count("msd") || selected_.count("vacf") || selected_.count("trajectory")) && c_.walk.n_steps == 0)
      m_.warnings.push_back("msd, vacf and trajectory need walk.n_steps > 0; skipped");
  }

  bool want(const std::string& s) const { return selected_.count(s) > 0; }
  bool any(std::initializer_list<const char*> names) const {
    for (const char* n : names)
      if (want(n)) return true;
    return false;
  }

  template <class Fn>
  void stage(const std::string& name, Fn&& fn) {
    m_.stages.push_back({name, 0, false});
    stage_ = name;
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    m_.stages.back().seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m_.stages.back().completed = true;
  }

  void emit(const std::string& rel, const std::string& content) {
    io::write_atomic(dir_ / rel, content);
    m_.files.push_back({rel, io::sha256(content), content.size(), stage_});
  }

  void warn(const Flags& flags, const std::string& where) {
    for (const auto& f : flags) m_.warnings.push_back(where + ": " + f);
  }

  Execution exec() const { return o_.exec; }

  // ------------------------------------------------------------- walk

  void walk() {
    WalkParams p{c_.walk.D0, c_.walk.dt, c_.walk.n_steps, c_.walk.n_walkers, c_.seed, c_.walk.drift};
    ensemble_ = simulate_ensemble(p, c_.geometry, exec());
    const auto& e = *ensemble_;
    std::size_t tw = c_.walk.trajectory_walkers;
    if (tw == 0 && want("trajectory")) tw = std::min<std::size_t>(e.n_walkers, 16);
    if (tw > 0) emit("trajectory.csv", io::trajectory_csv(e, tw));
    if (want("msd")) {
      const Series x = msd(e, Axis::x), y = msd(e, Axis::y), z = msd(e, Axis::z);
      io::Table t({"time_s", "msd_x_m2", "msd_y_m2", "msd_z_m2"});
      for (std::size_t k = 0; k < x.t.size(); ++k) t.row({io::f(x.t[k]), io::f(x.value[k]), io::f(y.value[k]), io::f(z.value[k])});
      emit("msd.csv", t.str());
    }
    if (want("vacf") || want("spectrum")) {
      const Axis a = gradient_axis(c_.gradient);
      const double window = c_.walk.vacf_window > 0 ? c_.walk.vacf_window : e.duration();
      vacf_ = vacf(e, a, a, window, exec());
      if (want("vacf")) emit("vacf.csv", io::vacf_csv(*vacf_));
    }
  }

  // ------------------------------------------------------------- cpmg

  void simulate_cpmg() {
    if (!c_.inputs.echo_csv.empty()) {
      for (std::size_t i = 0; i < c_.inputs.echo_csv.size(); ++i) {
        io::ScheduleHint hint;
        hint.echo_time = c_.inputs.echo_time_hint;
        EchoTrain t = io::ingest_echo_csv(c_.inputs.echo_csv[i], hint);
        warn(t.flags, "ingest " + t.schedule_id);
        trains_.push_back(std::move(t));
      }
      std::stable_sort(trains_.begin(), trains_.end(),
                       [](const EchoTrain& a, const EchoTrain& b) { return train_echo_time(a) < train_echo_time(b); });
      ingested_ = true;
    } else {
      const auto pops = populations(c_);
      const auto& tes = c_.schedule.echo_times;
      for (std::size_t i = 0; i < tes.size(); ++i) {
        const PulseSchedule s = build_cpmg_schedule(tes[i], c_.schedule.total_time);
        PopulationModel model;
        for (std::size_t j = 0; j < pops.size(); ++j) {
          const auto& p = pops[j];
          // Same walkers at every t_E so differences across the sweep share their noise.
          WalkParams wp{p.D0, p.dt_max, 0, p.n_walkers, rng::derive(c_.seed, rng::Domain::block, {j}), c_.walk.drift};
          EncodeOptions eo;
          eo.dt_max = p.dt_max;
          eo.exec = exec();
          model.populations.push_back({p.weight, p.T2, encode_walk(wp, p.geometry, s, c_.gradient, c_.constants, eo)});
        }
        EchoTrain t = synthesize_echo_train(model, c_.noise, rng::derive(c_.seed, rng::Domain::echo_noise, {i}));
        t.echo_time = tes[i];
        t.schedule_id = s.id;
        trains_.push_back(std::move(t));
      }
    }
    for (std::size_t i = 0; i < trains_.size(); ++i)
      emit("echo_trains/echo_train_" + padded(i, trains_.size()) + ".csv", io::echo_train_csv(trains_[i]));
    io::Table idx({"file", "echo_time_s", "nu_hz", "omega_rad_per_s", "total_time_s", "n_echoes"});
    for (std::size_t i = 0; i < trains_.size(); ++i) {
      const double tE = train_echo_time(trains_[i]);
      idx.row({"echo_trains/echo_train_" + padded(i, trains_.size()) + ".csv", io::f(tE), io::f(modulation_nu(tE)),
               io::f(modulation_omega(tE)), io::f(trains_[i].total_time()), io::u(trains_[i].times.size() - 1)});
    }
    emit("echo_trains/index.csv", idx.str());
  }

  // Shared T2 of all populations; none when unknown or mixed.
  std::optional<double> common_T2() const {
    if (ingested_) return std::nullopt;
    const auto pops = populations(c_);
    for (const auto& p : pops)
      if (p.T2 != pops.front().T2) return std::nullopt;
    return pops.front().T2;
  }

  void analyze_cpmg() {
    const auto T2 = common_T2();
    BetaOptions bo;
    if (T2) {
      bo.reference = BetaReference::absolute;
      bo.T2 = *T2;
    } else {
      m_.warnings.push_back("T2 not common to all populations; beta referenced to the shortest echo time");
    }
    OTOCSeries beta = beta_from_echo(trains_, bo);
    warn(beta.flags, "otoc");
    if (want("otoc")) emit("otoc.csv", io::otoc_csv(beta));
    json summary = json::object();
    if (want("spectrum")) {
      DiffusionSpectrum d = extract_D_spectrum(beta, c_.gradient, c_.constants, beta.tau);
      warn(d.flags, "spectrum");
      if (!T2) m_.warnings.push_back("spectrum: relative beta, D values are offsets from the reference echo time");
      emit("spectrum.csv", io::spectrum_csv(d, "echo"));
      if (vacf_) {
        DiffusionSpectrum v = vacf_spectrum(*vacf_, d.omega);
        warn(v.flags, "vacf spectrum");
        emit("spectrum_vacf.csv", io::spectrum_csv(v, "vacf"));
      }
    }
    if (want("lyapunov")) {
      // Shortest echo time gives the densest F(t).
      OTOCSeries F = otoc_from_train(trains_.front(), T2.value_or(infinity));
      warn(F.flags, "lyapunov");
      std::vector<double> t, y;
      for (std::size_t k = 0; k < F.time.size(); ++k)
        if (F.time[k] > 0 && F.beta[k] > 0) {
          t.push_back(F.time[k]);
          y.push_back(F.beta[k]);
        }
      json lj{{"echo_time_s", train_echo_time(trains_.front())}};
      if (t.size() >= 4) {
        const LyapunovFit fit = lyapunov_fit(t, y, t.front(), t.back());
        lj.update({{"lambda_per_s", fit.lambda},
                   {"window_lo_s", fit.window_lo},
                   {"window_hi_s", fit.window_hi},
                   {"r_squared", fit.r_squared},
                   {"sse_exponential", fit.sse_exponential},
                   {"sse_linear", fit.sse_linear},
                   {"poor_fit", fit.poor_fit},
                   {"n_points", fit.n_points}});
        if (fit.poor_fit) m_.warnings.push_back("lyapunov: exponential regime not supported by the data");
      } else {
        lj["poor_fit"] = true;
        m_.warnings.push_back("lyapunov: fewer than four positive F values; no fit");
      }
      summary["lyapunov"] = lj;
      emit("lyapunov.json", json_text(summary["lyapunov"]));
    }
  }

  void invert() {
    const EchoTrain& tr = trains_.front();
    json j{{"echo_time_s", train_echo_time(tr)}};
    if (want("t2")) {
      std::vector<double> y(tr.amplitude.size());
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = tr.amplitude[k].real();
      const auto grid = default_relaxation_grid(tr.times, c_.inversion.grid_points);
      double lambda = c_.inversion.lambda;
      if (lambda < 0) {
        const RegularizationChoice rc = choose_regularization(tr.times, y, grid, tr.noise_sigma > 0 ? tr.noise_sigma : -1);
        warn(rc.flags, "t2 regularization");
        lambda = rc.lambda;
        j["sigma"] = rc.sigma;
        j["l_curve_fallback"] = rc.fallback;
      }
      RelaxationDistribution d = nnls_tikhonov_1d(tr.times, y, grid, lambda);
      warn(d.flags, "t2");
      emit("t2_distribution.csv", io::distribution_csv(d));
      json peaks = json::array();
      for (const auto& p : find_peaks(d.T2, d.amplitude)) peaks.push_back({{"T2_s", p.centre}, {"mass", p.mass}});
      j["lambda"] = d.lambda;
      j["residual_norm"] = d.residual_norm;
      j["peaks"] = peaks;
    }
    if (want("pencil")) {
      PencilOptions po;
      po.L = c_.inversion.pencil_L;
      po.noise_sigma = tr.noise_sigma;
      po.rel_cutoff = c_.inversion.pencil_cutoff;
      const PencilResult r = matrix_pencil(tr.amplitude, train_echo_time(tr), po);
      json comps = json::array();
      for (const auto& cp : r.components)
        comps.push_back({{"rate_re_per_s", cp.rate.real()},
                         {"rate_im_per_s", cp.rate.imag()},
                         {"amplitude_re", cp.amplitude.real()},
                         {"amplitude_im", cp.amplitude.imag()},
                         {"T2_s", cp.rate.real() > 0 ? json(1 / cp.rate.real()) : json(nullptr)}});
      j["pencil"] = {{"order", r.order}, {"L", r.pencil}, {"components", comps}};
    }
    emit("invert.json", json_text(j));
  }

  // ------------------------------------------------------------- entropy

  void simulate_entropy() {
    schedule_ = entropy_schedule(c_.schedule.cycles);
    const auto pops = populations(c_);
    const auto starts = schedule_.block_starts();
    for (std::size_t j = 0; j < pops.size(); ++j) {
      const auto& p = pops[j];
      WalkParams wp{p.D0, p.dt_max, 0, p.n_walkers, rng::derive(c_.seed, rng::Domain::block, {j}), c_.walk.drift};
      EncodeOptions eo;
      eo.dt_max = p.dt_max;
      eo.restart_blocks = true;
      eo.block_ends_only = true;
      eo.exec = exec();
      EchoAverage a = encode_walk(wp, p.geometry, schedule_, c_.gradient, c_.constants, eo);
      // Fresh excitation per block: T2 acts over the block only.
      if (!std::isinf(p.T2))
        for (std::size_t b = 0; b < schedule_.blocks.size(); ++b)
          a.signal[b + 1] *= std::exp(-schedule_.blocks[b].duration() / p.T2);
      EchoTrain t = make_train(schedule_, a, infinity, c_.noise, rng::derive(c_.seed, rng::Domain::echo_noise, {j}));
      t.T2 = {p.T2};
      emit("entropy_trains/" + p.name + ".csv", io::echo_train_csv(t));
      entropy_trains_.push_back(std::move(t));
    }
  }

  void analyze_entropy() {
    const auto pops = populations(c_);
    std::string csv;
    json heat = json::array();
    for (std::size_t j = 0; j < pops.size(); ++j) {
      Flags flags;
      const auto samples = block_samples(schedule_, entropy_trains_[j], c_.gradient, c_.constants, &flags, pops[j].T2);
      warn(flags, "entropy " + pops[j].name);
      const EntropySeries es = entropy_change(samples, c_.entropy.reference);
      std::vector<double> D;
      for (const auto& s : samples) D.push_back(s.D);
      std::string part = io::entropy_csv(es, D, pops[j].name);
      csv += j == 0 ? part : part.substr(part.find('\n') + 1);
      // dQ/T per cycle of seven blocks.
      json cycles = json::array();
      for (std::size_t cy = 0; cy < c_.schedule.cycles; ++cy) {
        std::vector<double> nu, dS;
        for (std::size_t i = 0; i < es.block.size(); ++i)
          if (es.block[i] / 7 == cy) {
            nu.push_back(es.nu[i]);
            dS.push_back(es.dS[i]);
          }
        if (nu.size() >= 2) cycles.push_back({{"cycle", cy}, {"heat_over_T", heat_over_T(nu, dS)}});
      }
      heat.push_back({{"population", pops[j].name}, {"cycles", cycles}});
    }
    emit("entropy.csv", csv);
    emit("entropy.json", json_text(json{{"heat_over_T", heat}}));
  }

  // ------------------------------------------------------------- exchange

  void simulate_exchange() {
    const auto& x = c_.exchange;
    ExchangeOptions eo;
    eo.walkers_per_cell = x.walkers_per_cell;
    eo.noise_sigma = c_.noise.sigma;
    eo.phase_average = x.sampled_phases ? PhaseAverage::sampled : PhaseAverage::analytic;
    eo.shared_sample = x.shared_sample;
    eo.exec = exec();
    eo.D0 = c_.walk.D0;
    eo.dt_max = c_.walk.dt_max;
    const bool two = x.model == "two_site";
    for (std::size_t k = 0; k < x.t_mix.size(); ++k) {
      ExchangeExperiment ex{x.echo_times_1, x.echo_times_2, x.block_time, x.t_mix[k], c_.noise.transients};
      // One seed for every t_mix keeps the mixing-time series on common random numbers.
      ExchangeData d = two ? simulate_exchange_dataset(two_site_model(x), ex, c_.gradient, c_.constants, c_.seed, eo)
                           : simulate_exchange_dataset(c_.geometry, ex, c_.gradient, c_.constants, c_.seed, eo);
      emit("exchange/echo_matrix_" + padded(k, x.t_mix.size()) + ".csv", io::echo_matrix_csv(d));
      exchange_.push_back(std::move(d));
    }
  }

  void analyze_exchange() {
    const auto& x = c_.exchange;
    json rows = json::array();
    for (std::size_t k = 0; k < exchange_.size(); ++k) {
      const std::string tag = padded(k, exchange_.size());
      json r{{"t_mix_s", x.t_mix[k]}};
      if (want("exchange_map")) {
        MapOptions mo;
        mo.nu_grid = x.nu_grid;
        mo.D0 = c_.walk.D0;
        mo.lambda = x.lambda;
        const ExchangeMap map = build_exchange_map(exchange_[k], c_.gradient, c_.constants, mo);
        warn(map.inversion.flags, "exchange map t_mix " + io::f(x.t_mix[k]));
        emit("exchange/exchange_map_" + tag + ".csv", io::exchange_map_csv(map));
        r["offdiagonal_fraction"] = offdiagonal_fraction(map, x.nu_split);
        if (x.model == "two_site")
          r["two_site_prediction"] = 2 * x.p[0] * x.p[1] * -std::expm1(-x.k * x.t_mix[k]);
        r["map_total"] = map.intensity.sum();
      }
      if (want("two_time")) {
        const TwoTimeOtoc o = two_time_otoc(exchange_[k]);
        warn(o.flags, "two-time otoc t_mix " + io::f(x.t_mix[k]));
        emit("exchange/two_time_" + tag + ".csv", io::two_time_csv(o));
      }
      rows.push_back(r);
    }
    emit("exchange/summary.json", json_text(json{{"nu_split_hz", x.nu_split}, {"mixing_times", rows}}));
  }

  const RunConfig& c_;
  const RunOptions& o_;
  RunManifest& m_;
  fs::path dir_;
  std::string stage_;
  ScheduleKind kind_ = ScheduleKind::cpmg;
  std::set<std::string> selected_;
  std::optional<TrajectoryEnsemble> ensemble_;
  std::optional<VacfSeries> vacf_;
  std::vector<EchoTrain> trains_;
  bool ingested_ = false;
  PulseSchedule schedule_;
  std::vector<EchoTrain> entropy_trains_;
  std::vector<ExchangeData> exchange_;
};

}  // namespace detail

/// Runs the stages a verb needs, writing outputs and manifest.json under the
/// output directory. A stage error stops the run and leaves a manifest of the
/// completed stages; the error text is in `error`.
inline RunManifest run_pipeline(const RunConfig& c, const RunOptions& o = {}) {
  RunManifest m;
  m.verb = to_string(o.verb);
  m.config_hash = config_hash(c);
  m.seed = c.seed;
  m.threads = o.exec.threads;
  m.output_dir = resolve_output_dir(c, o.out);
  try {
    detail::Run(c, o, m).execute();
  } catch (const std::exception& e) {
    m.error = (m.stages.empty() ? std::string("setup") : m.stages.back().name) + ": " + e.what();
  }
  try {
    io::write_atomic(m.output_dir / "manifest.json", m.to_json().dump(2) + "\n");
  } catch (const std::exception& e) {
    if (m.error.empty()) m.error = std::string("manifest: ") + e.what();
  }
  return m;
}

}  // namespace mgse
