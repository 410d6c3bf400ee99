#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mgse/core.hpp"
#include "mgse/geometry.hpp"
#include "mgse/parallel.hpp"
#include "mgse/rng.hpp"
#include "mgse/schedule.hpp"
#include "mgse/walk.hpp"

namespace mgse {

/// Steps per half echo period for step `dt`; throws unless it is an integer.
inline std::size_t steps_per_half(double echo_time, double dt) {
  const double h = echo_time / (2 * dt);
  const double r = std::round(h);
  if (r < 1 || std::abs(h - r) > 1e-9 * std::max(1.0, h))
    fail(ErrorCode::time_grid_mismatch, "dt = " + std::to_string(dt) + " s does not divide t_E/2 = " +
                                            std::to_string(echo_time / 2) + " s");
  return static_cast<std::size_t>(r);
}

/// Largest step <= dt_max that puts every pi pulse on the grid.
inline double coerce_dt(double echo_time, double dt_max) {
  require(echo_time > 0 && dt_max > 0, ErrorCode::invalid_argument, "echo time and dt must be positive");
  const double half = echo_time / 2;
  const double n = std::max(1.0, std::ceil(half / dt_max * (1 - 1e-12)));
  return half / n;
}

/// Phases at t = 0 and at every echo instant, walker-major.
struct PhaseSeries {
  std::vector<double> times;
  std::size_t n_walkers = 0;
  std::vector<double> phases;
  double at(std::size_t w, std::size_t k) const { return phases[w * times.size() + k]; }
};

/// Ensemble averages at t = 0 and each echo instant.
struct EchoAverage {
  std::vector<double> times;
  std::vector<std::complex<double>> signal;  // <exp(i phi)>
  std::vector<double> mean_phase;            // <phi>
  std::vector<double> phase_variance;        // <phi^2> - <phi>^2
  std::size_t n_walkers = 0;
};

namespace detail {

// Midpoint-rule phase along one trajectory. `next(dt)` advances and returns
// the new position. Writes n_echoes + 1 phases to `out`. With `restart` each
// block starts from zero phase at the walker's current position.
template <class Next>
void accumulate_phase(const PulseSchedule& s, const std::vector<double>& dts, const Vec3& G, double gamma, Vec3 r0,
                      Next&& next, double* out, bool restart = false) {
  auto proj = [&](const Vec3& r) { return G[0] * (r[0] - r0[0]) + G[1] * (r[1] - r0[1]) + G[2] * (r[2] - r0[2]); };
  Vec3 last = r0;
  double phi = 0;
  double g_prev = 0;
  double f = 1;
  std::size_t e = 0;
  out[e++] = 0;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    const double dt = dts[b];
    const std::size_t half = steps_per_half(s.blocks[b].echo_time, dt);
    const double c = gamma * dt * 0.5;
    if (restart && b > 0) {
      r0 = last;
      phi = 0;
      g_prev = 0;
      f = 1;
    }
    for (std::size_t m = 0; m < s.blocks[b].n_echoes; ++m) {
      for (int h = 0; h < 2; ++h) {
        for (std::size_t k = 0; k < half; ++k) {
          const Vec3& r = next(dt);
          const double g_next = proj(r);
          phi += c * f * (g_prev + g_next);
          g_prev = g_next;
          if (restart) last = r;
        }
        if (h == 0) f = -f;  // pi pulse at mid echo
      }
      out[e++] = phi;
    }
  }
}

struct ChunkMoments {
  std::vector<double> re, im, sum, sum2;
  explicit ChunkMoments(std::size_t n = 0) : re(n, 0.0), im(n, 0.0), sum(n, 0.0), sum2(n, 0.0) {}
  void add(const double* phi, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      re[k] += std::cos(phi[k]);
      im[k] += std::sin(phi[k]);
      sum[k] += phi[k];
      sum2[k] += phi[k] * phi[k];
    }
  }
};

inline EchoAverage reduce(const std::vector<double>& times, const std::vector<ChunkMoments>& chunks, std::size_t n_walkers) {
  EchoAverage a;
  a.times = times;
  a.n_walkers = n_walkers;
  const std::size_t n = times.size();
  a.signal.resize(n);
  a.mean_phase.resize(n);
  a.phase_variance.resize(n);
  std::vector<double> col(chunks.size());
  auto total = [&](auto member, std::size_t k) {
    for (std::size_t c = 0; c < chunks.size(); ++c) col[c] = (chunks[c].*member)[k];
    return pairwise_sum<double>(col);
  };
  const double inv = 1.0 / static_cast<double>(n_walkers);
  for (std::size_t k = 0; k < n; ++k) {
    a.signal[k] = {total(&ChunkMoments::re, k) * inv, total(&ChunkMoments::im, k) * inv};
    const double mean = total(&ChunkMoments::sum, k) * inv;
    a.mean_phase[k] = mean;
    a.phase_variance[k] = std::max(0.0, total(&ChunkMoments::sum2, k) * inv - mean * mean);
  }
  return a;
}

inline std::vector<double> echo_times_with_origin(const PulseSchedule& s) {
  std::vector<double> t{0.0};
  const auto e = s.echo_times();
  t.insert(t.end(), e.begin(), e.end());
  return t;
}

}  // namespace detail

/// Per-walker phases from a stored ensemble. The ensemble step must divide
/// every t_E/2 of the schedule.
inline PhaseSeries encode_phase(const TrajectoryEnsemble& e, const PulseSchedule& s, const GradientSpec& grad,
                                const PhysicalConstants& c, const Execution& exec = {}) {
  validate(s);
  require(e.n_walkers > 0, ErrorCode::empty_input, "empty ensemble");
  std::vector<double> dts(s.blocks.size(), e.dt);
  std::size_t needed = 0;
  for (const auto& b : s.blocks) needed += 2 * steps_per_half(b.echo_time, e.dt) * b.n_echoes;
  require(needed <= e.n_steps, ErrorCode::time_grid_mismatch, "schedule is longer than the ensemble");
  PhaseSeries out;
  out.times = detail::echo_times_with_origin(s);
  out.n_walkers = e.n_walkers;
  out.phases.assign(e.n_walkers * out.times.size(), 0.0);
  for_each_chunk(e.n_walkers, walker_chunk, exec, [&](std::size_t, std::size_t b, std::size_t end) {
    for (std::size_t w = b; w < end; ++w) {
      std::size_t k = 0;
      const Vec3 r0 = e.position(w, 0);
      detail::accumulate_phase(s, dts, grad.G, c.gamma, r0, [&](double) { return e.position(w, ++k); },
                               &out.phases[w * out.times.size()]);
    }
  });
  return out;
}

inline EchoAverage average(const PhaseSeries& p) {
  require(p.n_walkers > 0, ErrorCode::empty_input, "no phase data");
  const std::size_t n = p.times.size();
  const std::size_t n_chunks = (p.n_walkers + walker_chunk - 1) / walker_chunk;
  std::vector<detail::ChunkMoments> chunks(n_chunks, detail::ChunkMoments(n));
  for_each_chunk(p.n_walkers, walker_chunk, {}, [&](std::size_t c, std::size_t b, std::size_t end) {
    for (std::size_t w = b; w < end; ++w) chunks[c].add(&p.phases[w * n], n);
  });
  return detail::reduce(p.times, chunks, p.n_walkers);
}

enum class BridgeCorrection { automatic, on, off };

struct EncodeOptions {
  double dt_max = 1e-6;
  BridgeCorrection bridge = BridgeCorrection::automatic;
  bool restart_blocks = false;  // every block is a fresh excitation
  bool block_ends_only = false;  // record t = 0 and the last echo of each block
  Execution exec{};
};

/// Walk-and-encode without storing trajectories. Each block uses the
/// largest grid-aligned step not above dt_max. Only coordinates with a
/// gradient component are simulated when the geometry is axis separable.
///
/// The midpoint rule misses the Brownian-bridge part of each step. For free
/// diffusion that part is Gaussian and independent of the grid values, so it
/// is restored exactly by the factor exp(-gamma^2 G^2 D0 dt^3 / 12) per step
/// (`automatic` applies it for free space only).
inline EchoAverage encode_walk(const WalkParams& p, const Geometry& g, const PulseSchedule& s, const GradientSpec& grad,
                               const PhysicalConstants& c, const EncodeOptions& opt = {}) {
  validate(s);
  validate(g);
  require(p.n_walkers > 0, ErrorCode::empty_input, "ensemble needs at least one walker");
  require(p.D0 > 0, ErrorCode::validation_error, "D0 must be positive");
  std::vector<double> dts;
  double dt_largest = 0;
  for (const auto& b : s.blocks) {
    dts.push_back(coerce_dt(b.echo_time, opt.dt_max));
    dt_largest = std::max(dt_largest, dts.back());
  }
  check_step(p.D0, dt_largest, g);

  std::array<bool, 3> active{};
  for (int i = 0; i < 3; ++i) active[i] = grad.G[i] != 0;

  const auto all_times = detail::echo_times_with_origin(s);
  const std::size_t n_all = all_times.size();
  std::vector<std::size_t> keep;
  if (opt.block_ends_only) {
    keep.push_back(0);
    std::size_t k = 0;
    for (const auto& b : s.blocks) keep.push_back(k += b.n_echoes);
  } else {
    keep.resize(n_all);
    for (std::size_t k = 0; k < n_all; ++k) keep[k] = k;
  }
  std::vector<double> times(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) times[i] = all_times[keep[i]];
  const std::size_t n = times.size();
  const std::size_t n_chunks = (p.n_walkers + walker_chunk - 1) / walker_chunk;
  std::vector<detail::ChunkMoments> chunks(n_chunks, detail::ChunkMoments(n));
  for_each_chunk(p.n_walkers, walker_chunk, opt.exec, [&](std::size_t ci, std::size_t b, std::size_t end) {
    std::vector<double> phi(n_all), kept(n);
    for (std::size_t w = b; w < end; ++w) {
      Walker walker(g, p.D0, p.drift, p.seed, w, active);
      const Vec3 r0 = walker.position();
      detail::accumulate_phase(s, dts, grad.G, c.gamma, r0,
                               [&](double dt) -> const Vec3& {
                                 walker.step(dt);
                                 return walker.position();
                               },
                               phi.data(), opt.restart_blocks);
      if (opt.block_ends_only) {
        for (std::size_t i = 0; i < n; ++i) kept[i] = phi[keep[i]];
        chunks[ci].add(kept.data(), n);
      } else {
        chunks[ci].add(phi.data(), n);
      }
    }
  });
  EchoAverage a = detail::reduce(times, chunks, p.n_walkers);

  const bool bridge = opt.bridge == BridgeCorrection::on ||
                      (opt.bridge == BridgeCorrection::automatic && std::holds_alternative<FreeSpace>(g));
  if (bridge) {
    const double G2 = dot(grad.G, grad.G);
    double beta = 0;
    std::size_t k = 1, i = 1;
    for (std::size_t bi = 0; bi < s.blocks.size(); ++bi) {
      if (opt.restart_blocks) beta = 0;
      const double per_echo = c.gamma * c.gamma * G2 * p.D0 * dts[bi] * dts[bi] * s.blocks[bi].echo_time / 12;
      for (std::size_t m = 0; m < s.blocks[bi].n_echoes; ++m, ++k) {
        beta += per_echo;
        if (i < n && keep[i] == k) a.signal[i++] *= std::exp(-beta);
      }
    }
  }
  return a;
}

/// Signal of a population with no diffusion weighting (phase identically 0).
inline EchoAverage unencoded(const PulseSchedule& s) {
  EchoAverage a;
  a.times = detail::echo_times_with_origin(s);
  a.signal.assign(a.times.size(), {1.0, 0.0});
  a.mean_phase.assign(a.times.size(), 0.0);
  a.phase_variance.assign(a.times.size(), 0.0);
  return a;
}

struct EchoTrain {
  std::vector<double> times;                    // s; times[0] = 0
  std::vector<std::complex<double>> amplitude;  // normalised to E(0)
  double echo_time = 0;                         // 0 for multi-block schedules
  double noise_sigma = 0;                       // effective per-echo sigma
  std::uint64_t seed = 0;
  std::string schedule_id;
  std::vector<double> T2;
  Flags flags;

  double total_time() const { return times.empty() ? 0.0 : times.back(); }
  std::vector<double> magnitudes() const {
    std::vector<double> m(amplitude.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(amplitude[i]);
    return m;
  }
};

struct Population {
  double weight = 1;
  double T2 = infinity;  // s
  EchoAverage phases;
};

struct PopulationModel {
  std::vector<Population> populations;
};

inline void validate(const PopulationModel& m) {
  require(!m.populations.empty(), ErrorCode::empty_input, "population model is empty");
  double sum = 0;
  for (const auto& p : m.populations) {
    require(p.weight >= 0, ErrorCode::validation_error, "population weights must be non-negative");
    require(p.T2 > 0, ErrorCode::validation_error, "T2 must be positive");
    require(!p.phases.times.empty(), ErrorCode::empty_input, "population has no phase data");
    sum += p.weight;
  }
  require(std::abs(sum - 1) <= 1e-9, ErrorCode::validation_error, "population weights must sum to 1");
}

struct NoiseSpec {
  double sigma = 0;            // per single transient
  std::size_t transients = 1;  // averaged scans; sigma scales as 1/sqrt(transients)
  double offset = 0;           // receiver constant offset per transient
  bool phase_cycling = true;   // alternate +x/-x so the offset cancels in pairs
  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

inline EchoTrain synthesize_echo_train(const PopulationModel& m, const NoiseSpec& noise, std::uint64_t seed) {
  validate(m);
  require(noise.sigma >= 0 && noise.transients >= 1, ErrorCode::validation_error, "invalid noise specification");
  const auto& times = m.populations.front().phases.times;
  for (const auto& p : m.populations)
    require(p.phases.times.size() == times.size(), ErrorCode::time_grid_mismatch, "populations use different schedules");
  EchoTrain e;
  e.times = times;
  e.amplitude.assign(times.size(), {0, 0});
  e.seed = seed;
  e.noise_sigma = noise.sigma / std::sqrt(static_cast<double>(noise.transients));
  for (const auto& p : m.populations) {
    e.T2.push_back(p.T2);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double decay = std::isinf(p.T2) ? 1.0 : std::exp(-times[k] / p.T2);
      e.amplitude[k] += p.weight * decay * p.phases.signal[k];
    }
  }
  const double nt = static_cast<double>(noise.transients);
  const double bias = noise.phase_cycling ? noise.offset * static_cast<double>(noise.transients % 2) / nt : noise.offset;
  if (e.noise_sigma > 0 || bias != 0) {
    Engine eng = rng::engine(seed, rng::Domain::echo_noise);
    for (std::size_t k = 1; k < times.size(); ++k) {
      const double re = rng::normal(eng), im = rng::normal(eng);
      e.amplitude[k] += std::complex<double>(bias + e.noise_sigma * re, e.noise_sigma * im);
    }
  }
  return e;
}

/// Convenience: train for one CPMG schedule with a single population.
inline EchoTrain make_train(const PulseSchedule& s, const EchoAverage& a, double T2, const NoiseSpec& noise,
                            std::uint64_t seed) {
  PopulationModel m;
  m.populations.push_back({1.0, T2, a});
  EchoTrain e = synthesize_echo_train(m, noise, seed);
  e.echo_time = s.blocks.size() == 1 ? s.blocks.front().echo_time : 0.0;
  e.schedule_id = s.id;
  return e;
}

}  // namespace mgse
