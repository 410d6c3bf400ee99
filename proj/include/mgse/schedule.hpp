#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "mgse/core.hpp"

namespace mgse {

struct GradientSpec {
  Vec3 G{0, 0, 0};  // T/m
  double magnitude() const { return norm(G); }
  friend bool operator==(const GradientSpec&, const GradientSpec&) = default;
};

struct EchoBlock {
  double echo_time = 0;  // inter-pi spacing t_E, s
  std::size_t n_echoes = 0;
  double duration() const { return echo_time * static_cast<double>(n_echoes); }
  friend bool operator==(const EchoBlock&, const EchoBlock&) = default;
};

/// Consecutive CPMG blocks. Within a block pi pulses sit at t_E/2 + m t_E and
/// echoes at (m+1) t_E, measured from the block start.
struct PulseSchedule {
  std::vector<EchoBlock> blocks;
  std::string id;

  double total_duration() const {
    double t = 0;
    for (const auto& b : blocks) t += b.duration();
    return t;
  }
  std::size_t n_echoes() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.n_echoes;
    return n;
  }
  std::vector<double> block_starts() const {
    std::vector<double> s;
    double t = 0;
    for (const auto& b : blocks) {
      s.push_back(t);
      t += b.duration();
    }
    return s;
  }
  /// Echo instants, excluding t = 0.
  std::vector<double> echo_times() const {
    std::vector<double> out;
    out.reserve(n_echoes());
    double t0 = 0;
    for (const auto& b : blocks) {
      for (std::size_t m = 1; m <= b.n_echoes; ++m) out.push_back(t0 + b.echo_time * static_cast<double>(m));
      t0 += b.duration();
    }
    return out;
  }
  std::vector<double> pulse_times() const {
    std::vector<double> out;
    out.reserve(n_echoes());
    double t0 = 0;
    for (const auto& b : blocks) {
      for (std::size_t m = 0; m < b.n_echoes; ++m) out.push_back(t0 + b.echo_time * (static_cast<double>(m) + 0.5));
      t0 += b.duration();
    }
    return out;
  }
  PulseSchedule& append(const PulseSchedule& other) {
    blocks.insert(blocks.end(), other.blocks.begin(), other.blocks.end());
    return *this;
  }
  friend bool operator==(const PulseSchedule& a, const PulseSchedule& b) { return a.blocks == b.blocks; }
};

inline void validate(const PulseSchedule& s) {
  require(!s.blocks.empty(), ErrorCode::validation_error, "schedule has no blocks");
  for (const auto& b : s.blocks) {
    require(b.echo_time > 0, ErrorCode::validation_error, "echo time must be positive");
    require(b.n_echoes >= 1, ErrorCode::validation_error, "block needs at least one echo");
  }
}

inline PulseSchedule build_cpmg_schedule(double echo_time, double total_time) {
  require(echo_time > 0 && total_time > 0, ErrorCode::invalid_argument, "echo time and total time must be positive");
  require(echo_time <= total_time * (1 + 1e-12), ErrorCode::invalid_argument, "echo time exceeds total time");
  const auto n = static_cast<std::size_t>(std::llround(total_time / echo_time));
  PulseSchedule s;
  s.blocks.push_back({echo_time, std::max<std::size_t>(n, 1)});
  s.id = "cpmg";
  return s;
}

/// Seven-block echo-time cycle of 55 ms blocks, repeated `cycles` times. The
/// 600-echo block uses t_E = 55 ms / 600 exactly.
inline PulseSchedule entropy_schedule(std::size_t cycles = 20) {
  static constexpr std::size_t counts[7] = {1000, 800, 600, 400, 600, 800, 1000};
  constexpr double block_length = 55e-3;
  PulseSchedule s;
  s.id = "entropy";
  for (std::size_t c = 0; c < cycles; ++c)
    for (std::size_t n : counts) s.blocks.push_back({block_length / static_cast<double>(n), n});
  return s;
}

/// Linearly spaced t_E sweep, `steps` values from lo to hi.
inline std::vector<double> echo_time_sweep(double lo = 55e-6, double hi = 1100e-6, std::size_t steps = 20) {
  require(steps >= 2 && lo > 0 && hi > lo, ErrorCode::invalid_argument, "invalid echo-time sweep");
  std::vector<double> v(steps);
  for (std::size_t i = 0; i < steps; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return v;
}

/// Sign of the toggling-frame modulation f(t) in {+1, -1}.
class ModulationFunction {
 public:
  explicit ModulationFunction(const PulseSchedule& s) : schedule_(s), starts_(s.block_starts()) {
    std::size_t flips = 0;
    for (const auto& b : s.blocks) {
      prior_flips_.push_back(flips);
      flips += b.n_echoes;
    }
  }

  double operator()(double t) const {
    const auto [b, local] = locate(t);
    if (b < 0) return 1.0;
    const auto& blk = schedule_.blocks[b];
    const double x = local / blk.echo_time;
    auto flips = static_cast<std::size_t>(std::floor(x + 0.5));
    flips = std::min(flips, blk.n_echoes);
    return ((prior_flips_[b] + flips) % 2 == 0) ? 1.0 : -1.0;
  }

  std::size_t flip_count() const { return schedule_.n_echoes(); }
  const std::vector<double>& block_starts() const { return starts_; }
  std::size_t prior_flips(std::size_t block) const { return prior_flips_[block]; }

  // (block index, time within block); block -1 for t < 0.
  std::pair<int, double> locate(double t) const {
    if (t < 0 || schedule_.blocks.empty()) return {-1, 0};
    for (std::size_t i = schedule_.blocks.size(); i-- > 0;)
      if (t >= starts_[i]) return {static_cast<int>(i), t - starts_[i]};
    return {0, t};
  }

 private:
  PulseSchedule schedule_;
  std::vector<double> starts_;
  std::vector<std::size_t> prior_flips_;
};

inline ModulationFunction modulation_function(const PulseSchedule& s) {
  validate(s);
  return ModulationFunction(s);
}

/// q(t) = gamma * |G| * integral of f, projected on the gradient direction.
class WaveVector {
 public:
  WaveVector(const PulseSchedule& s, const GradientSpec& g, const PhysicalConstants& c)
      : f_(s), schedule_(s), scale_(c.gamma * g.magnitude()) {}

  double operator()(double t) const {
    const auto [b, local] = f_.locate(t);
    if (b < 0) return 0;
    const auto& blk = schedule_.blocks[b];
    const double tE = blk.echo_time;
    const double x = std::min(local, blk.duration());
    auto m = static_cast<std::size_t>(std::floor(x / tE));
    if (m >= blk.n_echoes) return 0;
    const double u = x - tE * static_cast<double>(m);
    const double sign = ((f_.prior_flips(b) + m) % 2 == 0) ? 1.0 : -1.0;
    return scale_ * sign * (u < 0.5 * tE ? u : tE - u);
  }

  double peak(double echo_time) const { return scale_ * echo_time / 2; }

 private:
  ModulationFunction f_;
  PulseSchedule schedule_;
  double scale_;
};

inline WaveVector wavevector(const PulseSchedule& s, const GradientSpec& g, const PhysicalConstants& c) {
  validate(s);
  return WaveVector(s, g, c);
}

struct QSpectrum {
  std::vector<double> omega;  // rad/s
  std::vector<double> power;  // |Q(omega)|^2, rad^2 s^2 / m^2
  double tau = 0;
};

namespace detail {

inline double sinc(double x) { return std::abs(x) < 1e-8 ? 1.0 - x * x / 6 : std::sin(x) / x; }

// sum_{m=0}^{n-1} exp(i m psi) in Dirichlet-kernel form.
inline std::complex<double> geometric(double psi, std::size_t n) {
  psi = std::remainder(psi, 2 * pi);
  const double nd = static_cast<double>(n);
  if (std::abs(psi) < 1e-12) return {nd, 0};
  const double mag = std::sin(nd * psi / 2) / std::sin(psi / 2);
  return std::polar(mag, (nd - 1) * psi / 2);
}

// Fourier transform of q restricted to [0, tau] (tau rounded down to an echo).
inline std::complex<double> q_transform(const PulseSchedule& s, double scale, double tau, double w) {
  std::complex<double> total(0, 0);
  double t0 = 0;
  std::size_t flips = 0;
  const std::complex<double> I(0, 1);
  for (const auto& b : s.blocks) {
    if (t0 >= tau * (1 - 1e-12)) break;
    const double tE = b.echo_time;
    std::size_t n = b.n_echoes;
    const double avail = tau - t0;
    if (avail < b.duration() * (1 - 1e-12)) n = static_cast<std::size_t>(std::floor(avail / tE + 1e-9));
    const double sign = (flips % 2 == 0) ? 1.0 : -1.0;
    const std::complex<double> hump = std::exp(I * (w * (t0 + tE / 2))) * (scale * tE / 2) * (tE / 2) *
                                      std::pow(sinc(w * tE / 4), 2);
    total += sign * hump * geometric(w * tE + pi, n);
    flips += b.n_echoes;
    t0 += b.duration();
  }
  return total;
}

inline std::complex<double> f_transform(const PulseSchedule& s, double tau, double w) {
  // f over one period [0, tE): +1 then -1; transform of that period cell.
  std::complex<double> total(0, 0);
  double t0 = 0;
  std::size_t flips = 0;
  const std::complex<double> I(0, 1);
  for (const auto& b : s.blocks) {
    if (t0 >= tau * (1 - 1e-12)) break;
    const double tE = b.echo_time;
    std::size_t n = b.n_echoes;
    const double avail = tau - t0;
    if (avail < b.duration() * (1 - 1e-12)) n = static_cast<std::size_t>(std::floor(avail / tE + 1e-9));
    const double sign = (flips % 2 == 0) ? 1.0 : -1.0;
    // Boxcar of width tE centred on the pulse at tE/2, sign flipping per cell:
    // +1 on [0,tE/2), -1 on [tE/2, tE) is the difference of two quarter boxes.
    auto box = [&](double a, double c) {
      if (std::abs(w) < 1e-12) return std::complex<double>(c - a, 0);
      return (std::exp(I * (w * c)) - std::exp(I * (w * a))) / (I * w);
    };
    const std::complex<double> cell = box(t0, t0 + tE / 2) - box(t0 + tE / 2, t0 + tE);
    total += sign * cell * geometric(w * tE + pi, n);
    flips += b.n_echoes;
    t0 += b.duration();
  }
  return total;
}

inline void check_lobe_resolution(const PulseSchedule& s, double tau, const std::vector<double>& grid) {
  const double half = 2 * pi / tau;
  std::vector<double> seen;
  for (const auto& b : s.blocks) {
    const double wm = modulation_omega(b.echo_time);
    if (std::find(seen.begin(), seen.end(), wm) != seen.end()) continue;
    seen.push_back(wm);
    if (wm > grid.back() || wm < grid.front()) continue;
    std::size_t count = 0;
    for (double w : grid)
      if (w >= wm - half && w <= wm + half) ++count;
    if (count < 8)
      fail(ErrorCode::grid_too_coarse, "frequency grid has " + std::to_string(count) +
                                           " points across the fundamental lobe (need 8)");
  }
}

}  // namespace detail

inline QSpectrum wavevector_spectrum(const PulseSchedule& s, const GradientSpec& g, const PhysicalConstants& c,
                                     double tau, const std::vector<double>& omega) {
  validate(s);
  require(!omega.empty(), ErrorCode::empty_input, "empty frequency grid");
  require(std::is_sorted(omega.begin(), omega.end()), ErrorCode::non_monotone, "frequency grid must be increasing");
  require(tau > 0 && tau <= s.total_duration() * (1 + 1e-12), ErrorCode::invalid_argument,
          "tau must lie within the schedule");
  detail::check_lobe_resolution(s, tau, omega);
  const double scale = c.gamma * g.magnitude();
  QSpectrum q;
  q.omega = omega;
  q.tau = tau;
  q.power.resize(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) q.power[i] = std::norm(detail::q_transform(s, scale, tau, omega[i]));
  return q;
}

/// |F(omega)|^2 of the sign function f itself (dimension s^2).
inline QSpectrum modulation_spectrum(const PulseSchedule& s, double tau, const std::vector<double>& omega) {
  validate(s);
  detail::check_lobe_resolution(s, tau, omega);
  QSpectrum q;
  q.omega = omega;
  q.tau = tau;
  q.power.resize(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) q.power[i] = std::norm(detail::f_transform(s, tau, omega[i]));
  return q;
}

/// Uniform grid [lo, hi] with `n` points.
inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  require(n >= 2, ErrorCode::invalid_argument, "grid needs at least two points");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  require(n >= 2 && lo > 0 && hi > lo, ErrorCode::invalid_argument, "invalid log grid");
  std::vector<double> v(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  return v;
}

}  // namespace mgse
