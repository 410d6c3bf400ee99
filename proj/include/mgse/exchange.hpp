#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mgse/core.hpp"
#include "mgse/encode.hpp"
#include "mgse/geometry.hpp"
#include "mgse/inversion.hpp"
#include "mgse/parallel.hpp"
#include "mgse/rng.hpp"
#include "mgse/schedule.hpp"
#include "mgse/spectra.hpp"

namespace mgse {

struct ExchangeExperiment {
  std::vector<double> echo_times_1;  // direct dimension, s
  std::vector<double> echo_times_2;  // indirect dimension, s
  double block_time = 55e-3;         // per-dimension total encoding time, s
  double t_mix = 0;                  // s
  std::size_t transients = 1;
};

inline void validate(const ExchangeExperiment& e) {
  require(!e.echo_times_1.empty() && !e.echo_times_2.empty(), ErrorCode::validation_error,
          "exchange experiment needs echo times in both dimensions");
  require(e.t_mix >= 0, ErrorCode::validation_error, "mixing time must be non-negative");
  require(e.block_time > 0, ErrorCode::validation_error, "block time must be positive");
  require(e.transients >= 1, ErrorCode::validation_error, "transients must be at least 1");
  for (double t : e.echo_times_1) require(t > 0 && t <= e.block_time, ErrorCode::validation_error, "invalid echo time");
  for (double t : e.echo_times_2) require(t > 0 && t <= e.block_time, ErrorCode::validation_error, "invalid echo time");
}

struct FlatSpectrum {
  double D0 = 0;
};
/// D(omega) = D0 omega^2 / (omega^2 + omega_c^2), omega_c = 2 pi nu_c.
struct LorentzianSpectrum {
  double D0 = 0;
  double nu_c = 0;  // Hz
};
using SiteSpectrum = std::variant<FlatSpectrum, LorentzianSpectrum, DiffusionSpectrum>;

inline double evaluate(const SiteSpectrum& s, double omega) {
  return std::visit(overloaded{
                        [](const FlatSpectrum& f) { return f.D0; },
                        [&](const LorentzianSpectrum& l) {
                          const double wc = 2 * pi * l.nu_c;
                          return l.D0 * omega * omega / (omega * omega + wc * wc);
                        },
                        [&](const DiffusionSpectrum& d) { return detail::interpolate(d.omega, d.D, omega); },
                    },
                    s);
}

/// Attenuation exponent of a CPMG train of length T from all odd harmonics
/// through `max_harmonic`: (8 g^2 G^2 T / pi^2 w_m^2) sum D(n w_m) / n^4.
inline double harmonic_attenuation(const SiteSpectrum& s, double echo_time, double T, const GradientSpec& g,
                                   const PhysicalConstants& c, int max_harmonic = 199) {
  const double wm = modulation_omega(echo_time);
  double acc = 0;
  for (int n = max_harmonic - (max_harmonic % 2 == 0); n >= 1; n -= 2) {
    const double n4 = std::pow(double(n), 4);
    acc += evaluate(s, n * wm) / n4;
  }
  return lowest_harmonic_exponent(1.0, g, c, wm, T) * acc;
}

struct TwoSiteModel {
  std::array<double, 2> p{0.5, 0.5};
  std::array<SiteSpectrum, 2> spectra{};
  double k = 0;  // 1/s
  std::array<double, 2> T2{infinity, infinity};
};

inline void validate(const TwoSiteModel& m) {
  require(m.p[0] >= 0 && m.p[1] >= 0 && std::abs(m.p[0] + m.p[1] - 1) <= 1e-9, ErrorCode::validation_error,
          "site populations must be non-negative and sum to 1");
  require(m.k >= 0, ErrorCode::validation_error, "exchange rate must be non-negative");
}

/// Two-interval echo matrix, rows over echo_times_1 and columns over echo_times_2.
struct ExchangeData {
  ExchangeExperiment experiment;
  Eigen::MatrixXcd E;
  double noise_sigma = 0;
  std::uint64_t seed = 0;
};

enum class PhaseAverage { analytic, sampled };

struct ExchangeOptions {
  std::size_t walkers_per_cell = 100000;
  double noise_sigma = 0;  // per transient
  PhaseAverage phase_average = PhaseAverage::analytic;
  bool shared_sample = true;
  Execution exec{};
  // Geometry path only.
  double D0 = 2.3e-9;
  double dt_max = 1e-6;
};

namespace detail {

inline Eigen::MatrixXcd add_noise(Eigen::MatrixXcd E, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return E;
  for (Eigen::Index j = 0; j < E.cols(); ++j)
    for (Eigen::Index i = 0; i < E.rows(); ++i) {
      Engine eng = rng::engine(seed, rng::Domain::echo_noise, {std::uint64_t(i), std::uint64_t(j)});
      const double re = rng::normal(eng), im = rng::normal(eng);
      E(i, j) += std::complex<double>(sigma * re, sigma * im);
    }
  return E;
}

}  // namespace detail

namespace detail {

struct SiteSample {
  std::vector<std::uint8_t> site1, site2;
  std::vector<double> z1, z2;
  explicit SiteSample(std::size_t n) : site1(n), site2(n), z1(n), z2(n) {}
  void draw(Engine& eng, std::size_t b, std::size_t end, double p0, double p_jump) {
    for (std::size_t w = b; w < end; ++w) {
      int a = rng::uniform(eng) < p0 ? 0 : 1;
      site1[w] = static_cast<std::uint8_t>(a);
      z1[w] = rng::normal(eng);
      if (rng::uniform(eng) < p_jump) a = rng::uniform(eng) < p0 ? 0 : 1;
      site2[w] = static_cast<std::uint8_t>(a);
      z2[w] = rng::normal(eng);
    }
  }
};

}  // namespace detail

/// Site-resolved model: sites are fixed while encoding. Each walker draws
/// its site from p, standard normals z1 and z2, and a possible redraw from p
/// during t_mix (probability 1 - exp(-k t_mix)); cell (i, j) sees the phase
/// sigma_site1(i) z1 + sigma_site2(j) z2.
///
/// With `PhaseAverage::analytic` the Gaussian phase average is taken exactly
/// given each walker's site history, so only the site sample is random. With
/// `shared_sample` one walker sample is measured in every cell (as the same
/// spins are); otherwise each cell draws its own from (seed, i, j).
inline ExchangeData simulate_exchange_dataset(const TwoSiteModel& m, const ExchangeExperiment& x, const GradientSpec& g,
                                              const PhysicalConstants& c, std::uint64_t seed,
                                              const ExchangeOptions& opt = {}) {
  validate(m);
  validate(x);
  require(opt.walkers_per_cell > 0, ErrorCode::empty_input, "need at least one walker per cell");
  const std::size_t n1 = x.echo_times_1.size(), n2 = x.echo_times_2.size();
  std::array<std::vector<double>, 2> b1, b2;  // attenuation exponents per site
  std::array<std::vector<double>, 2> d1, d2;  // T2 decay per site
  for (int s = 0; s < 2; ++s) {
    for (double t : x.echo_times_1) {
      b1[s].push_back(harmonic_attenuation(m.spectra[s], t, x.block_time, g, c));
      d1[s].push_back(std::isinf(m.T2[s]) ? 1.0 : std::exp(-x.block_time / m.T2[s]));
    }
    for (double t : x.echo_times_2) {
      b2[s].push_back(harmonic_attenuation(m.spectra[s], t, x.block_time, g, c));
      d2[s].push_back(std::isinf(m.T2[s]) ? 1.0 : std::exp(-x.block_time / m.T2[s]));
    }
  }
  const double p_jump = -std::expm1(-m.k * x.t_mix);
  const std::size_t N = opt.walkers_per_cell;
  const bool analytic = opt.phase_average == PhaseAverage::analytic;
  detail::SiteSample shared(opt.shared_sample ? N : 0);
  if (opt.shared_sample)
    for_each_chunk(N, walker_chunk, opt.exec, [&](std::size_t chunk, std::size_t b, std::size_t end) {
      Engine eng = rng::engine(seed, rng::Domain::exchange_cell, {0xA11, chunk});
      shared.draw(eng, b, end, m.p[0], p_jump);
    });
  ExchangeData out;
  out.experiment = x;
  out.seed = seed;
  out.E = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n1), static_cast<Eigen::Index>(n2));
  for_each_chunk(n1 * n2, 1, opt.exec, [&](std::size_t, std::size_t cell, std::size_t) {
    const std::size_t i = cell / n2, j = cell % n2;
    detail::SiteSample own(opt.shared_sample ? 0 : N);
    if (!opt.shared_sample) {
      Engine eng = rng::engine(seed, rng::Domain::exchange_cell, {i, j});
      own.draw(eng, 0, N, m.p[0], p_jump);
    }
    const detail::SiteSample& smp = opt.shared_sample ? shared : own;
    const double inv = 1.0 / static_cast<double>(N);
    std::complex<double> value;
    if (analytic) {
      // Joint site counts; exact average over the Gaussian phases.
      std::array<std::array<std::size_t, 2>, 2> n{};
      for (std::size_t w = 0; w < N; ++w) ++n[smp.site1[w]][smp.site2[w]];
      double acc = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          acc += static_cast<double>(n[a][b]) * d1[a][i] * d2[b][j] * std::exp(-b1[a][i] - b2[b][j]);
      value = {acc * inv, 0.0};
    } else {
      std::vector<double> re(N), im(N);
      for (std::size_t w = 0; w < N; ++w) {
        const int a = smp.site1[w], b = smp.site2[w];
        const double phi = std::sqrt(2 * b1[a][i]) * smp.z1[w] + std::sqrt(2 * b2[b][j]) * smp.z2[w];
        const double amp = d1[a][i] * d2[b][j];
        re[w] = amp * std::cos(phi);
        im[w] = amp * std::sin(phi);
      }
      value = {pairwise_sum<double>(re) * inv, pairwise_sum<double>(im) * inv};
    }
    out.E(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
  });
  out.noise_sigma = opt.noise_sigma / std::sqrt(static_cast<double>(x.transients));
  out.E = detail::add_noise(out.E, out.noise_sigma, seed);
  return out;
}

/// Walk path: walkers migrate continuously through `geometry` during both
/// encoding blocks and the mixing interval.
inline ExchangeData simulate_exchange_dataset(const Geometry& geometry, const ExchangeExperiment& x,
                                              const GradientSpec& g, const PhysicalConstants& c, std::uint64_t seed,
                                              const ExchangeOptions& opt = {}) {
  validate(x);
  validate(geometry);
  require(opt.walkers_per_cell > 0, ErrorCode::empty_input, "need at least one walker per cell");
  const std::size_t n1 = x.echo_times_1.size(), n2 = x.echo_times_2.size();
  double dt_largest = 0;
  for (double t : x.echo_times_1) dt_largest = std::max(dt_largest, coerce_dt(t, opt.dt_max));
  for (double t : x.echo_times_2) dt_largest = std::max(dt_largest, coerce_dt(t, opt.dt_max));
  check_step(opt.D0, dt_largest, geometry);
  const std::size_t mix_steps = x.t_mix > 0 ? static_cast<std::size_t>(std::ceil(x.t_mix / opt.dt_max - 1e-9)) : 0;
  const double dt_mix = mix_steps ? x.t_mix / static_cast<double>(mix_steps) : 0.0;
  ExchangeData out;
  out.experiment = x;
  out.seed = seed;
  out.E = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n1), static_cast<Eigen::Index>(n2));
  for_each_chunk(n1 * n2, 1, opt.exec, [&](std::size_t, std::size_t cell, std::size_t) {
    const std::size_t i = cell / n2, j = cell % n2;
    const auto sch1 = build_cpmg_schedule(x.echo_times_1[i], x.block_time);
    const auto sch2 = build_cpmg_schedule(x.echo_times_2[j], x.block_time);
    const std::vector<double> dt1{coerce_dt(x.echo_times_1[i], opt.dt_max)};
    const std::vector<double> dt2{coerce_dt(x.echo_times_2[j], opt.dt_max)};
    const std::uint64_t cell_seed = rng::derive(seed, rng::Domain::exchange_cell, {i, j});
    const std::size_t N = opt.walkers_per_cell;
    std::vector<double> re(N), im(N), p1(sch1.n_echoes() + 1), p2(sch2.n_echoes() + 1);
    for (std::size_t w = 0; w < N; ++w) {
      Walker walker(geometry, opt.D0, {0, 0, 0}, cell_seed, w);
      auto next = [&](double dt) -> const Vec3& {
        walker.step(dt);
        return walker.position();
      };
      detail::accumulate_phase(sch1, dt1, g.G, c.gamma, walker.position(), next, p1.data());
      for (std::size_t k = 0; k < mix_steps; ++k) walker.step(dt_mix);
      detail::accumulate_phase(sch2, dt2, g.G, c.gamma, walker.position(), next, p2.data());
      const double phi = p1.back() + p2.back();
      re[w] = std::cos(phi);
      im[w] = std::sin(phi);
    }
    const double inv = 1.0 / static_cast<double>(N);
    out.E(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = {pairwise_sum<double>(re) * inv,
                                                                         pairwise_sum<double>(im) * inv};
  });
  out.noise_sigma = opt.noise_sigma / std::sqrt(static_cast<double>(x.transients));
  out.E = detail::add_noise(out.E, out.noise_sigma, seed);
  return out;
}

struct ExchangeMap {
  std::vector<double> nu1, nu2;  // Hz
  Eigen::MatrixXd intensity;
  double t_mix = 0;
  Map2D inversion;
};

struct MapOptions {
  std::vector<double> nu_grid;  // Lorentzian cutoff nodes, Hz; empty selects 24 log nodes
  double D0 = 2.3e-9;           // scale of the kernel family
  double lambda = 1e-3;
  double rel_cutoff = 1e-3;
};

namespace detail {

inline std::size_t shortest(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<double> default_nu_grid(const ExchangeExperiment& x) {
  double lo = infinity, hi = 0;
  for (const auto* v : {&x.echo_times_1, &x.echo_times_2})
    for (double t : *v) {
      lo = std::min(lo, modulation_nu(t));
      hi = std::max(hi, modulation_nu(t));
    }
  return log_grid(0.1 * lo, 2 * hi, 24);
}

// Rows: echo times; columns: cutoff nodes. Normalised to the shortest echo time.
inline Eigen::MatrixXd mode_kernel(const std::vector<double>& echo_times, const std::vector<double>& nu, double D0,
                                   double T, const GradientSpec& g, const PhysicalConstants& c,
                                   std::vector<double>& ref_weight) {
  const std::size_t r = shortest(echo_times);
  Eigen::MatrixXd K(static_cast<Eigen::Index>(echo_times.size()), static_cast<Eigen::Index>(nu.size()));
  ref_weight.assign(nu.size(), 0.0);
  for (std::size_t k = 0; k < nu.size(); ++k) {
    const SiteSpectrum s = LorentzianSpectrum{D0, nu[k]};
    const double b_ref = harmonic_attenuation(s, echo_times[r], T, g, c);
    ref_weight[k] = std::exp(-b_ref);
    for (std::size_t i = 0; i < echo_times.size(); ++i)
      K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          std::exp(-(harmonic_attenuation(s, echo_times[i], T, g, c) - b_ref));
  }
  return K;
}

}  // namespace detail

/// Fixed-total-time normalisation, then a nonnegative 2D inversion over a
/// family of Lorentzian diffusion modes. Intensities estimate the joint
/// population of (mode before, mode after) mixing.
inline ExchangeMap build_exchange_map(const ExchangeData& data, const GradientSpec& g, const PhysicalConstants& c,
                                      const MapOptions& opt = {}) {
  const auto& x = data.experiment;
  validate(x);
  require(data.E.rows() == static_cast<Eigen::Index>(x.echo_times_1.size()) &&
              data.E.cols() == static_cast<Eigen::Index>(x.echo_times_2.size()),
          ErrorCode::dimension_mismatch, "echo matrix does not match the experiment");
  const auto nu = opt.nu_grid.empty() ? detail::default_nu_grid(x) : opt.nu_grid;
  std::vector<double> w1, w2;
  const Eigen::MatrixXd K1 = detail::mode_kernel(x.echo_times_1, nu, opt.D0, x.block_time, g, c, w1);
  const Eigen::MatrixXd K2 = detail::mode_kernel(x.echo_times_2, nu, opt.D0, x.block_time, g, c, w2);
  const auto r1 = static_cast<Eigen::Index>(detail::shortest(x.echo_times_1));
  const auto r2 = static_cast<Eigen::Index>(detail::shortest(x.echo_times_2));
  const double e_ref = data.E(r1, r2).real();
  require(e_ref > 0, ErrorCode::nonpositive_value, "reference echo amplitude is not positive");
  const Eigen::MatrixXd En = data.E.real() / e_ref;
  ExchangeMap map;
  map.nu1 = nu;
  map.nu2 = nu;
  map.t_mix = x.t_mix;
  map.inversion = invert_2d(En, K1, K2, opt.lambda, nu, nu, opt.rel_cutoff);
  map.intensity = map.inversion.F;
  for (Eigen::Index a = 0; a < map.intensity.rows(); ++a)
    for (Eigen::Index b = 0; b < map.intensity.cols(); ++b)
      map.intensity(a, b) *= e_ref / (w1[static_cast<std::size_t>(a)] * w2[static_cast<std::size_t>(b)]);
  return map;
}

/// Mass with nu1 and nu2 on opposite sides of nu_split over the total mass.
inline double offdiagonal_fraction(const Eigen::MatrixXd& M, const std::vector<double>& nu1, const std::vector<double>& nu2,
                                   double nu_split) {
  require(M.size() > 0 && M.sum() > 0, ErrorCode::empty_input, "map is empty");
  require(M.rows() == static_cast<Eigen::Index>(nu1.size()) && M.cols() == static_cast<Eigen::Index>(nu2.size()),
          ErrorCode::dimension_mismatch, "map and grids differ in size");
  require(nu_split > nu1.front() && nu_split < nu1.back() && nu_split > nu2.front() && nu_split < nu2.back(),
          ErrorCode::invalid_argument, "split frequency must lie inside both grids");
  double off = 0;
  for (Eigen::Index a = 0; a < M.rows(); ++a)
    for (Eigen::Index b = 0; b < M.cols(); ++b) {
      const double x = nu1[static_cast<std::size_t>(a)], y = nu2[static_cast<std::size_t>(b)];
      if ((x < nu_split && y > nu_split) || (y < nu_split && x > nu_split)) off += M(a, b);
    }
  return off / M.sum();
}

inline double offdiagonal_fraction(const ExchangeMap& m, double nu_split) {
  return offdiagonal_fraction(m.intensity, m.nu1, m.nu2, nu_split);
}

struct TwoTimeOtoc {
  std::vector<double> echo_times_1, echo_times_2;
  Eigen::MatrixXd F;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> valid;
  Flags flags;
};

/// F(t1, t2) = -ln[Re E(t1, t2) / Re E_ref], reference at the shortest echo
/// time of each dimension. Non-positive cells are marked invalid.
inline TwoTimeOtoc two_time_otoc(const ExchangeData& data) {
  const auto& x = data.experiment;
  const auto r1 = static_cast<Eigen::Index>(detail::shortest(x.echo_times_1));
  const auto r2 = static_cast<Eigen::Index>(detail::shortest(x.echo_times_2));
  const double e_ref = data.E(r1, r2).real();
  require(e_ref > 0, ErrorCode::nonpositive_value, "reference echo amplitude is not positive");
  TwoTimeOtoc o;
  o.echo_times_1 = x.echo_times_1;
  o.echo_times_2 = x.echo_times_2;
  o.F = Eigen::MatrixXd::Zero(data.E.rows(), data.E.cols());
  o.valid.setConstant(data.E.rows(), data.E.cols(), true);
  std::size_t dropped = 0;
  for (Eigen::Index i = 0; i < data.E.rows(); ++i)
    for (Eigen::Index j = 0; j < data.E.cols(); ++j) {
      const double e = data.E(i, j).real();
      if (e > 0) {
        o.F(i, j) = (i == r1 && j == r2) ? 0.0 : -std::log(e / e_ref);
      } else {
        o.valid(i, j) = false;
        ++dropped;
      }
    }
  if (dropped) o.flags.push_back(std::to_string(dropped) + " non-positive cells dropped");
  return o;
}

}  // namespace mgse
