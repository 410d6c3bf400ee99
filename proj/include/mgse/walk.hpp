#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <cstdint>
#include <string>
#include <utility>
#include <iomanip>
#include <sstream>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "mgse/core.hpp"
#include "mgse/geometry.hpp"
#include "mgse/parallel.hpp"
#include "mgse/rng.hpp"

namespace mgse {

struct WalkParams {
  double D0 = 0;             // m^2/s
  double dt = 0;             // s
  std::size_t n_steps = 0;
  std::size_t n_walkers = 0;
  std::uint64_t seed = 0;
  Vec3 drift{0, 0, 0};       // m/s
  friend bool operator==(const WalkParams&, const WalkParams&) = default;
};

inline double step_length(double D0, double dt) { return std::sqrt(2 * D0 * dt); }

inline std::vector<std::string> violations(const WalkParams& p) {
  std::vector<std::string> out;
  if (!(p.D0 > 0)) out.push_back("D0 must be positive");
  if (!(p.dt > 0)) out.push_back("dt must be positive");
  if (p.n_walkers == 0) out.push_back("n_walkers must be at least 1");
  return out;
}

inline void check_step(double D0, double dt, const Geometry& g) {
  const double limit = 0.2 * confinement_length(g);
  const double s = step_length(D0, dt);
  if (!(s < limit))
  {
    std::ostringstream m;
    m << std::setprecision(3) << "step length " << s << " m is not below 0.2 x confinement length (" << limit << " m)";
    fail(ErrorCode::step_too_large, m.str());
  }
}

inline void validate(const WalkParams& p, const Geometry& g) {
  validate(g);
  if (p.n_walkers == 0) fail(ErrorCode::empty_input, "ensemble needs at least one walker");
  auto v = violations(p);
  if (!v.empty()) fail(ErrorCode::validation_error, "invalid walk parameters: " + v.front());
  check_step(p.D0, p.dt, g);
}

/// One reflected Brownian walker. Each coordinate draws from its own stream
/// and site jumps / initial placement draw from a per-walker event stream, so
/// skipping coordinates the caller does not need (separable geometries only)
/// leaves every other coordinate bit-identical.
class Walker {
 public:
  Walker(const Geometry& g, double D0, const Vec3& drift, std::uint64_t seed, std::uint64_t walker,
         std::array<bool, 3> active = {true, true, true})
      : D0_(D0), drift_(drift), active_(active), seed_(seed), walker_(walker) {
    if (const auto* ts = std::get_if<TwoSite>(&g)) {
      two_ = ts;
      site_ = rng::uniform(events()) < ts->weights[0] ? 0 : 1;
      pos_ = sample_uniform(ts->sites[site_], events());
    } else {
      single_ = as_site(g);
      // Free space starts at the origin without consuming randomness.
      if (!std::holds_alternative<FreeSpace>(single_)) pos_ = sample_uniform(single_, events());
    }
    if (!current_site_separable()) active_ = {true, true, true};
    free_ = !two_ && std::holds_alternative<FreeSpace>(single_);
    drifting_ = drift_[0] != 0 || drift_[1] != 0 || drift_[2] != 0;
    for (int i = 0; i < 3; ++i)
      if (active_[i]) {
        axis_[i].emplace(rng::derive(seed_, rng::Domain::walk_axis, {walker_, std::uint64_t(i)}));
        order_[n_active_++] = i;
      }
  }

  const Vec3& position() const { return pos_; }
  int site() const { return site_; }

  void step(double dt) {
    if (dt != dt_cached_) {
      dt_cached_ = dt;
      s_cached_ = std::sqrt(2 * D0_ * dt);
    }
    const double s = s_cached_;
    const SiteGeometry& g = two_ ? two_->sites[site_] : single_;
    if (free_) {
      for (int j = 0; j < n_active_; ++j) {
        const int i = order_[j];
        pos_[i] += s * rng::normal(*axis_[i]);
        if (drifting_) pos_[i] += drift_[i] * dt;
      }
    } else if (axis_separable(g)) {
      for (int i = 0; i < 3; ++i) {
        if (!active_[i]) continue;
        pos_[i] = fold_axis(g, i, pos_[i] + drift_[i] * dt + s * rng::normal(*axis_[i]));
      }
    } else {
      Vec3 d;
      for (int i = 0; i < 3; ++i) d[i] = drift_[i] * dt + s * rng::normal(*axis_[i]);
      pos_ = displace(g, pos_, d);
    }
    if (two_ && two_->jump_rate > 0) {
      // Poisson clock; on a tick the site is redrawn from the stationary weights.
      if (rng::uniform(events()) < -std::expm1(-two_->jump_rate * dt)) {
        const int ns = rng::uniform(events()) < two_->weights[0] ? 0 : 1;
        if (ns != site_) {
          site_ = ns;
          pos_ = redraw(two_->sites[site_], pos_, events());
        }
      }
    }
  }

 private:
  bool current_site_separable() const {
    if (two_) return axis_separable(two_->sites[0]) && axis_separable(two_->sites[1]);
    return axis_separable(single_);
  }

  Engine& events() {
    if (!events_) events_.emplace(rng::derive(seed_, rng::Domain::walk_events, {walker_}));
    return *events_;
  }

  const TwoSite* two_ = nullptr;
  SiteGeometry single_{};
  double D0_;
  Vec3 drift_;
  std::array<bool, 3> active_;
  std::uint64_t seed_;
  std::uint64_t walker_;
  // Engine construction costs as much as seeding, so unused streams stay empty.
  std::array<std::optional<Engine>, 3> axis_;
  std::optional<Engine> events_;
  Vec3 pos_{0, 0, 0};
  int site_ = 0;
  std::array<int, 3> order_{};
  int n_active_ = 0;
  bool free_ = false;
  bool drifting_ = false;
  double dt_cached_ = -1;
  double s_cached_ = 0;
};

struct TrajectoryEnsemble {
  std::size_t n_walkers = 0;
  std::size_t n_steps = 0;
  double dt = 0;
  std::string geometry;
  std::uint64_t seed = 0;
  // walker-major: [walker][step][axis]
  std::vector<double> positions;
  // [walker][step], only for two-site geometries
  std::vector<std::uint8_t> sites;

  std::size_t stride() const { return (n_steps + 1) * 3; }
  double at(std::size_t w, std::size_t k, int axis) const { return positions[w * stride() + 3 * k + axis]; }
  Vec3 position(std::size_t w, std::size_t k) const {
    const double* p = &positions[w * stride() + 3 * k];
    return {p[0], p[1], p[2]};
  }
  double duration() const { return dt * static_cast<double>(n_steps); }
};

inline constexpr std::size_t walker_chunk = 512;

inline TrajectoryEnsemble simulate_ensemble(const WalkParams& p, const Geometry& g, const Execution& exec = {}) {
  validate(p, g);
  TrajectoryEnsemble e;
  e.n_walkers = p.n_walkers;
  e.n_steps = p.n_steps;
  e.dt = p.dt;
  e.geometry = tag(g);
  e.seed = p.seed;
  e.positions.assign(p.n_walkers * e.stride(), 0.0);
  const bool two = std::holds_alternative<TwoSite>(g);
  if (two) e.sites.assign(p.n_walkers * (p.n_steps + 1), 0);
  for_each_chunk(p.n_walkers, walker_chunk, exec, [&](std::size_t, std::size_t b, std::size_t end) {
    for (std::size_t w = b; w < end; ++w) {
      Walker walker(g, p.D0, p.drift, p.seed, w);
      double* out = &e.positions[w * e.stride()];
      for (std::size_t k = 0;; ++k) {
        const Vec3& r = walker.position();
        out[3 * k] = r[0];
        out[3 * k + 1] = r[1];
        out[3 * k + 2] = r[2];
        if (two) e.sites[w * (p.n_steps + 1) + k] = static_cast<std::uint8_t>(walker.site());
        if (k == p.n_steps) break;
        walker.step(p.dt);
      }
    }
  });
  return e;
}

struct Series {
  std::vector<double> t;
  std::vector<double> value;
};

/// Mean squared displacement from the initial position along one axis.
inline Series msd(const TrajectoryEnsemble& e, Axis axis) {
  require(e.n_walkers > 0, ErrorCode::empty_input, "msd of an empty ensemble");
  const int a = index(axis);
  Series s;
  s.t.resize(e.n_steps + 1);
  s.value.resize(e.n_steps + 1);
  std::vector<double> sq(e.n_walkers);
  for (std::size_t k = 0; k <= e.n_steps; ++k) {
    for (std::size_t w = 0; w < e.n_walkers; ++w) {
      const double d = e.at(w, k, a) - e.at(w, 0, a);
      sq[w] = d * d;
    }
    s.t[k] = e.dt * static_cast<double>(k);
    s.value[k] = pairwise_sum<double>(sq) / static_cast<double>(e.n_walkers);
  }
  return s;
}

struct VacfSeries {
  std::vector<double> lags;    // s
  std::vector<double> values;  // m^2/s^2
  double window = 0;           // s
  double dt = 0;
  Axis alpha = Axis::z;
  Axis beta = Axis::z;
};

/// <v_alpha(t+lag) v_beta(t)> averaged over walkers and over all time origins,
/// symmetrised in (alpha, beta). Velocities are per-step displacement / dt.
inline VacfSeries vacf(const TrajectoryEnsemble& e, Axis alpha, Axis beta, double window, const Execution& exec = {}) {
  require(e.n_walkers > 0, ErrorCode::empty_input, "vacf of an empty ensemble");
  require(e.n_steps >= 1, ErrorCode::window_exceeded, "vacf needs at least one step");
  require(window >= 0 && window <= e.duration() * (1 + 1e-12), ErrorCode::window_exceeded,
          "vacf window exceeds trajectory duration");
  const std::size_t n = e.n_steps;
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::floor(window / e.dt + 1e-9)), n - 1);
  std::size_t nfft = 1;
  while (nfft < 2 * n) nfft <<= 1;
  const int ia = index(alpha), ib = index(beta);
  const std::size_t n_chunks = (e.n_walkers + walker_chunk - 1) / walker_chunk;
  std::vector<std::vector<double>> partial(n_chunks, std::vector<double>(m + 1, 0.0));

  for_each_chunk(e.n_walkers, walker_chunk, exec, [&](std::size_t c, std::size_t b, std::size_t end) {
    Eigen::FFT<double> fft;
    std::vector<double> va(nfft, 0.0), vb(nfft, 0.0), corr;
    std::vector<std::complex<double>> A, B, P(nfft);
    auto& acc = partial[c];
    for (std::size_t w = b; w < end; ++w) {
      for (std::size_t k = 0; k < n; ++k) {
        va[k] = (e.at(w, k + 1, ia) - e.at(w, k, ia)) / e.dt;
        vb[k] = (e.at(w, k + 1, ib) - e.at(w, k, ib)) / e.dt;
      }
      fft.fwd(A, va);
      if (ia == ib) {
        for (std::size_t i = 0; i < A.size(); ++i) P[i] = std::norm(A[i]);
      } else {
        fft.fwd(B, vb);
        for (std::size_t i = 0; i < A.size(); ++i) P[i] = (A[i] * std::conj(B[i])).real();
      }
      fft.inv(corr, P);
      for (std::size_t L = 0; L <= m; ++L) acc[L] += corr[L];
    }
  });

  VacfSeries out;
  out.window = static_cast<double>(m) * e.dt;
  out.dt = e.dt;
  out.alpha = alpha;
  out.beta = beta;
  out.lags.resize(m + 1);
  out.values.resize(m + 1);
  std::vector<double> col(n_chunks);
  for (std::size_t L = 0; L <= m; ++L) {
    for (std::size_t c = 0; c < n_chunks; ++c) col[c] = partial[c][L];
    const double s = pairwise_sum<double>(col);
    out.lags[L] = static_cast<double>(L) * e.dt;
    out.values[L] = s / (static_cast<double>(e.n_walkers) * static_cast<double>(n - L));
  }
  return out;
}

}  // namespace mgse
