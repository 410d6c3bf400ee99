#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mgse/core.hpp"
#include "mgse/encode.hpp"
#include "mgse/schedule.hpp"
#include "mgse/walk.hpp"

namespace mgse {

struct DiffusionSpectrum {
  std::vector<double> omega;  // rad/s
  std::vector<double> D;      // m^2/s
  double window = 0;          // s
  std::string population;
  Flags flags;
};

inline DiffusionSpectrum flat_spectrum(double D0, const std::vector<double>& omega) {
  DiffusionSpectrum s;
  s.omega = omega;
  s.D.assign(omega.size(), D0);
  s.window = infinity;
  return s;
}

/// Trapezoid integral of the VACF from lag 0 to tau.
inline double green_kubo_D(const VacfSeries& v, double tau) {
  require(!v.values.empty(), ErrorCode::empty_input, "empty VACF");
  require(tau >= 0 && tau <= v.window * (1 + 1e-9) + 1e-300, ErrorCode::window_exceeded, "tau exceeds the VACF window");
  const auto m = static_cast<std::size_t>(std::llround(tau / v.dt));
  if (m == 0) return 0;
  double s = 0.5 * (v.values[0] + v.values[m]);
  for (std::size_t L = 1; L < m; ++L) s += v.values[L];
  return s * v.dt;
}

/// Rectangular-window cosine transform of the VACF, trapezoid in lag.
inline DiffusionSpectrum vacf_spectrum(const VacfSeries& v, const std::vector<double>& omega) {
  require(!v.values.empty(), ErrorCode::empty_input, "empty VACF");
  for (double w : omega)
    require(std::abs(w) < pi / v.dt, ErrorCode::beyond_nyquist, "frequency grid reaches the Nyquist limit pi/dt");
  const std::size_t m = v.values.size() - 1;
  DiffusionSpectrum s;
  s.omega = omega;
  s.window = v.window;
  s.D.resize(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    const double w = omega[i] * v.dt;
    double acc = 0.5 * v.values[0];
    for (std::size_t L = 1; L <= m; ++L) acc += (L == m ? 0.5 : 1.0) * v.values[L] * std::cos(w * static_cast<double>(L));
    if (m == 0) acc = 0.5 * v.values[0];
    s.D[i] = acc * v.dt;
  }
  return s;
}

/// (2/pi) * integral of D(omega) sin(tau omega)/omega over the spectrum grid.
inline double sine_reconstruction(const DiffusionSpectrum& s, double tau) {
  require(s.omega.size() >= 2, ErrorCode::empty_input, "spectrum needs at least two points");
  auto f = [&](std::size_t i) {
    const double w = s.omega[i];
    return w == 0 ? s.D[i] * tau : s.D[i] * std::sin(tau * w) / w;
  };
  double acc = 0;
  for (std::size_t i = 1; i < s.omega.size(); ++i) acc += 0.5 * (f(i) + f(i - 1)) * (s.omega[i] - s.omega[i - 1]);
  return 2 / pi * acc;
}

/// Attenuation exponent of the single-harmonic kernel.
inline double lowest_harmonic_exponent(double D, const GradientSpec& g, const PhysicalConstants& c, double omega_m,
                                       double tau) {
  require(omega_m > 0, ErrorCode::invalid_argument, "modulation frequency must be positive");
  const double gG = c.gamma * g.magnitude();
  return 8 * gG * gG * D * tau / (pi * pi * omega_m * omega_m);
}

inline double attenuation_lowest_harmonic(double D, const GradientSpec& g, const PhysicalConstants& c, double omega_m,
                                          double tau, double T2) {
  const double relax = std::isinf(T2) ? 0.0 : tau / T2;
  return std::exp(-relax - lowest_harmonic_exponent(D, g, c, omega_m, tau));
}

/// Carr-Purcell free-diffusion exponent gamma^2 G^2 D t_E^2 T / 12.
inline double carr_purcell_exponent(double D, const GradientSpec& g, const PhysicalConstants& c, double echo_time,
                                    double total) {
  const double gG = c.gamma * g.magnitude();
  return gG * gG * D * echo_time * echo_time * total / 12;
}

namespace detail {

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
  if (x.size() == 1) return y[0];
  auto it = std::upper_bound(x.begin(), x.end(), at);
  if (it == x.begin()) return y.front();
  if (it == x.end()) return y.back();
  const std::size_t i = static_cast<std::size_t>(it - x.begin());
  const double t = (at - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

}  // namespace detail

/// beta = (1/pi) * integral over omega >= 0 of |Q|^2 D, trapezoid on the Q grid.
inline double attenuation_exact(const QSpectrum& q, const DiffusionSpectrum& d) {
  require(q.omega.size() >= 2, ErrorCode::empty_input, "wavevector spectrum needs at least two points");
  require(!d.omega.empty(), ErrorCode::empty_input, "empty diffusion spectrum");
  const double span = d.omega.back() - d.omega.front();
  const double tol = 1e-9 * std::max(1.0, std::abs(d.omega.back()));
  if (d.omega.size() > 1)
    require(q.omega.front() >= d.omega.front() - tol && q.omega.back() <= d.omega.back() + tol && span > 0,
            ErrorCode::time_grid_mismatch, "wavevector grid extends beyond the diffusion spectrum");
  double acc = 0;
  double prev = q.power[0] * detail::interpolate(d.omega, d.D, q.omega[0]);
  for (std::size_t i = 1; i < q.omega.size(); ++i) {
    const double cur = q.power[i] * detail::interpolate(d.omega, d.D, q.omega[i]);
    acc += 0.5 * (prev + cur) * (q.omega[i] - q.omega[i - 1]);
    prev = cur;
  }
  return acc / pi;
}

/// Attenuation exponents tagged with the modulation frequency of each train.
struct OTOCSeries {
  std::vector<double> time;        // tau or echo instant, s
  std::vector<double> echo_time;   // s
  std::vector<double> omega_m;     // rad/s
  std::vector<double> beta;
  double tau = 0;
  Flags flags;
};

enum class BetaReference { minimal_attenuation, absolute };

struct BetaOptions {
  BetaReference reference = BetaReference::minimal_attenuation;
  double T2 = infinity;  // only for the absolute reference
};

inline double train_echo_time(const EchoTrain& t) {
  if (t.echo_time > 0) return t.echo_time;
  require(t.times.size() >= 2, ErrorCode::empty_input, "echo train needs at least one echo");
  return t.times[1] - t.times[0];
}

/// beta(t_E) = -ln[Re E(T; t_E) / Re E_ref(T)] across trains sharing the total
/// time T. With the absolute reference the known T2 decay is divided out
/// instead.
inline OTOCSeries beta_from_echo(const std::vector<EchoTrain>& trains, const BetaOptions& opt = {}) {
  const bool absolute = opt.reference == BetaReference::absolute;
  require(!trains.empty() && (absolute || trains.size() >= 2), ErrorCode::empty_input,
          "beta extraction needs at least two trains");
  std::size_t ref = 0;
  for (std::size_t i = 1; i < trains.size(); ++i)
    if (train_echo_time(trains[i]) < train_echo_time(trains[ref])) ref = i;
  const double T = trains[ref].total_time();
  for (const auto& t : trains) {
    const double slack = std::max(train_echo_time(t), train_echo_time(trains[ref])) * (1 + 1e-9);
    require(std::abs(t.total_time() - T) <= slack, ErrorCode::mismatched_total_time,
            "echo trains do not share the total time");
  }
  OTOCSeries s;
  s.tau = T;
  const double e_ref = trains[ref].amplitude.back().real();
  std::vector<std::size_t> order(trains.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return train_echo_time(trains[a]) < train_echo_time(trains[b]); });
  if (!absolute && !(e_ref > 0)) {
    s.flags.push_back("reference train has non-positive amplitude; no beta values");
    return s;
  }
  for (std::size_t i : order) {
    const double e = trains[i].amplitude.back().real();
    const double tE = train_echo_time(trains[i]);
    if (!(e > 0)) {
      s.flags.push_back("non-positive echo amplitude at t_E = " + std::to_string(tE) + " s dropped");
      continue;
    }
    double beta;
    if (absolute) {
      const double T_i = trains[i].total_time();
      beta = -std::log(e) - (std::isinf(opt.T2) ? 0.0 : T_i / opt.T2);
    } else {
      beta = i == ref ? 0.0 : -std::log(e / e_ref);
    }
    s.time.push_back(trains[i].total_time());
    s.echo_time.push_back(tE);
    s.omega_m.push_back(modulation_omega(tE));
    s.beta.push_back(beta);
  }
  return s;
}

/// F(t_k) = -ln Re E(t_k) - t_k/T2 along one train.
inline OTOCSeries otoc_from_train(const EchoTrain& t, double T2 = infinity) {
  OTOCSeries s;
  s.tau = t.total_time();
  const double tE = train_echo_time(t);
  for (std::size_t k = 0; k < t.times.size(); ++k) {
    const double e = t.amplitude[k].real();
    if (!(e > 0)) {
      s.flags.push_back("non-positive echo amplitude at index " + std::to_string(k) + " dropped");
      continue;
    }
    s.time.push_back(t.times[k]);
    s.echo_time.push_back(tE);
    s.omega_m.push_back(modulation_omega(tE));
    s.beta.push_back(-std::log(e) - (std::isinf(T2) ? 0.0 : t.times[k] / T2));
  }
  return s;
}

/// Inverts the lowest-harmonic kernel at each modulation frequency.
inline DiffusionSpectrum extract_D_spectrum(const OTOCSeries& s, const GradientSpec& g, const PhysicalConstants& c,
                                            double tau) {
  require(tau > 0, ErrorCode::invalid_argument, "tau must be positive");
  require(g.magnitude() > 0, ErrorCode::invalid_argument, "gradient must be non-zero");
  DiffusionSpectrum d;
  d.window = tau;
  const double gG = c.gamma * g.magnitude();
  for (std::size_t i = 0; i < s.beta.size(); ++i) {
    double b = s.beta[i];
    if (b < 0) {
      d.flags.push_back("negative beta at omega_m = " + std::to_string(s.omega_m[i]) + " rad/s clamped to 0");
      b = 0;
    }
    d.omega.push_back(s.omega_m[i]);
    d.D.push_back(b * pi * pi * s.omega_m[i] * s.omega_m[i] / (8 * gG * gG * tau));
  }
  return d;
}

/// One diffusion estimate per schedule block.
struct BlockSample {
  std::size_t block = 0;
  double time = 0;  // block start, s
  double nu = 0;    // Hz
  double D = 0;
};

struct EntropySeries {
  std::vector<std::size_t> block;
  std::vector<double> time;
  std::vector<double> nu;
  std::vector<double> dS;
};

enum class EntropyReference {
  first_block,         // D of the first block of the whole schedule
  first_at_frequency,  // first block sharing the same nu
};

/// D per block from a train sampled at t = 0 and each block end, every block
/// a fresh excitation. Blocks with non-positive attenuation are dropped and flagged.
inline std::vector<BlockSample> block_samples(const PulseSchedule& s, const EchoTrain& t, const GradientSpec& g,
                                              const PhysicalConstants& c, Flags* flags = nullptr, double T2 = infinity) {
  require(t.amplitude.size() == s.blocks.size() + 1, ErrorCode::dimension_mismatch,
          "train must hold t = 0 plus one sample per block");
  require(g.magnitude() > 0, ErrorCode::invalid_argument, "gradient must be non-zero");
  const auto starts = s.block_starts();
  std::vector<BlockSample> out;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    const auto& blk = s.blocks[b];
    const double e = t.amplitude[b + 1].real();
    const double T = blk.duration();
    const double beta = e > 0 ? -std::log(e) - (std::isinf(T2) ? 0.0 : T / T2) : 0.0;
    if (!(beta > 0)) {
      if (flags) flags->push_back("block " + std::to_string(b) + " has non-positive attenuation; dropped");
      continue;
    }
    const double wm = modulation_omega(blk.echo_time);
    const double gG = c.gamma * g.magnitude();
    out.push_back({b, starts[b], modulation_nu(blk.echo_time), beta * pi * pi * wm * wm / (8 * gG * gG * T)});
  }
  return out;
}

inline EntropySeries entropy_change(const std::vector<BlockSample>& samples,
                                    EntropyReference ref = EntropyReference::first_block) {
  require(!samples.empty(), ErrorCode::empty_input, "no diffusion samples");
  for (const auto& s : samples) require(s.D > 0, ErrorCode::nonpositive_value, "diffusion samples must be positive");
  EntropySeries out;
  for (const auto& s : samples) {
    double d0 = samples.front().D;
    if (ref == EntropyReference::first_at_frequency) {
      for (const auto& r : samples)
        if (std::abs(r.nu - s.nu) <= 1e-9 * s.nu) {
          d0 = r.D;
          break;
        }
    }
    out.block.push_back(s.block);
    out.time.push_back(s.time);
    out.nu.push_back(s.nu);
    out.dS.push_back(std::log(s.D / d0));
  }
  return out;
}

/// Trapezoid integral of dS over nu (Hz) after sorting by nu.
inline double heat_over_T(std::vector<double> nu, std::vector<double> dS) {
  require(nu.size() == dS.size(), ErrorCode::dimension_mismatch, "nu and dS lengths differ");
  require(nu.size() >= 2, ErrorCode::empty_input, "heat integral needs at least two frequencies");
  std::vector<std::size_t> idx(nu.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return nu[a] < nu[b]; });
  double acc = 0;
  for (std::size_t i = 1; i < idx.size(); ++i)
    acc += 0.5 * (dS[idx[i]] + dS[idx[i - 1]]) * (nu[idx[i]] - nu[idx[i - 1]]);
  return acc;
}

struct LyapunovFit {
  double lambda = 0;  // 1/s
  double window_lo = 0, window_hi = 0;
  double r_squared = 0;     // of ln F vs t
  double sse_exponential = 0;
  double sse_linear = 0;
  bool poor_fit = false;
  std::size_t n_points = 0;
};

inline LyapunovFit lyapunov_fit(const std::vector<double>& t, const std::vector<double>& F, double lo, double hi) {
  require(t.size() == F.size(), ErrorCode::dimension_mismatch, "time and F lengths differ");
  std::vector<double> x, y, yl;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < lo || t[i] > hi) continue;
    require(F[i] > 0, ErrorCode::nonpositive_value, "F must be positive inside the fit window");
    x.push_back(t[i]);
    y.push_back(F[i]);
    yl.push_back(std::log(F[i]));
  }
  require(x.size() >= 4, ErrorCode::empty_input, "fit window needs at least four points");
  const std::size_t n = x.size();
  auto line = [&](const std::vector<double>& yy, double& a, double& b) {
    Eigen::MatrixXd A(n, 2);
    Eigen::VectorXd v(n);
    for (std::size_t i = 0; i < n; ++i) {
      A(i, 0) = 1;
      A(i, 1) = x[i];
      v(i) = yy[i];
    }
    Eigen::Vector2d c = A.colPivHouseholderQr().solve(v);
    a = c(0);
    b = c(1);
  };
  double a, b, c0, c1;
  line(yl, a, b);
  line(y, c0, c1);
  LyapunovFit fit;
  fit.lambda = b / 2;
  fit.window_lo = lo;
  fit.window_hi = hi;
  fit.n_points = n;
  const double ymean = std::accumulate(yl.begin(), yl.end(), 0.0) / static_cast<double>(n);
  double ss_tot = 0, ss_res = 0, scale = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = yl[i] - (a + b * x[i]);
    ss_res += r * r;
    ss_tot += (yl[i] - ymean) * (yl[i] - ymean);
    const double fe = y[i] - std::exp(a + b * x[i]);
    const double fl = y[i] - (c0 + c1 * x[i]);
    fit.sse_exponential += fe * fe;
    fit.sse_linear += fl * fl;
    scale += y[i] * y[i];
  }
  fit.r_squared = ss_tot > 0 ? 1 - ss_res / ss_tot : 1.0;
  fit.poor_fit = fit.sse_exponential > 1e-12 * scale && fit.sse_linear < fit.sse_exponential;
  return fit;
}

}  // namespace mgse
