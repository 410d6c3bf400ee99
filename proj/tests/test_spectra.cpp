#include <gtest/gtest.h>

#include <cmath>

#include "mgse/spectra.hpp"
#include "oracles.hpp"

using namespace mgse;

namespace {

constexpr double D0 = 2.3e-9;
const GradientSpec G7{{0, 0, 7}};
const PhysicalConstants H{};

// Train holding only t = 0 and the final echo, enough for beta_from_echo.
EchoTrain two_point(double tE, double T, double endpoint) {
  EchoTrain t;
  t.echo_time = tE;
  t.times = {0, T};
  t.amplitude = {1, endpoint};
  return t;
}

}  // namespace

TEST(GreenKubo, FreeWalkRecoversD0) {
  const auto e = simulate_ensemble({D0, 1e-6, 400, 2000, 1, {}}, FreeSpace{});
  const auto v = vacf(e, Axis::z, Axis::z, 100e-6);
  EXPECT_NEAR(green_kubo_D(v, 100e-6) / D0, 1.0, 0.02);
  EXPECT_EQ(green_kubo_D(v, 0), 0);
  try {
    green_kubo_D(v, 1e-3);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::window_exceeded);
  }
}

TEST(GreenKubo, BoundedMotionLosesDiffusivity) {
  const double a = 1e-6;
  const auto e = simulate_ensemble({D0, 2e-6, 3000, 300, 2, {}}, Slab{a, Axis::z});
  const auto v = vacf(e, Axis::z, Axis::z, 5e-3);
  const double tau = 5e-3;
  EXPECT_LT(green_kubo_D(v, tau) * tau, a * a / 4);
  EXPECT_LT(green_kubo_D(v, tau), 0.1 * D0);
}

TEST(VacfSpectrum, FreeWalkIsFlat) {
  const auto e = simulate_ensemble({D0, 1e-6, 4000, 2000, 3, {}}, FreeSpace{});
  const auto v = vacf(e, Axis::z, Axis::z, 10e-6);
  const auto s = vacf_spectrum(v, linear_grid(0, 0.99 * pi / v.dt, 200));
  for (double d : s.D) EXPECT_NEAR(d / D0, 1.0, 0.02);
}

TEST(VacfSpectrum, SlabSpectrumVanishesAtZeroFrequency) {
  const double a = 1e-6;
  const auto e = simulate_ensemble({D0, 2e-6, 3000, 300, 4, {}}, Slab{a, Axis::z});
  const auto v = vacf(e, Axis::z, Axis::z, 5e-3);
  ASSERT_GT(v.window, 10 * a * a / D0);
  const auto s = vacf_spectrum(v, {0.0, 100 * D0 / (a * a)});
  EXPECT_LT(s.D[0], 0.05 * D0);
  EXPECT_LT(s.D[0], s.D[1]);
}

TEST(VacfSpectrum, NyquistIsEnforced) {
  const auto e = simulate_ensemble({D0, 1e-6, 100, 10, 5, {}}, FreeSpace{});
  const auto v = vacf(e, Axis::z, Axis::z, 50e-6);
  try {
    vacf_spectrum(v, {0.0, pi / v.dt});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::beyond_nyquist);
  }
}

TEST(VacfSpectrum, CosineAndSineTransformsAreDual) {
  // Truncating the sine integral at Nyquist costs about 1/(pi^2 tau/dt), so tau spans many steps.
  const double a = 3e-6;
  const auto e = simulate_ensemble({D0, 2e-6, 1000, 1000, 6, {}}, Slab{a, Axis::z});
  const auto v = vacf(e, Axis::z, Axis::z, 1e-3);
  const auto s = vacf_spectrum(v, linear_grid(0, 0.999 * pi / v.dt, 26000));
  for (double tau : {100e-6, 200e-6, 400e-6}) {
    const double gk = green_kubo_D(v, tau);
    EXPECT_NEAR(sine_reconstruction(s, tau) / gk, 1.0, 0.03) << tau;
  }
}

TEST(Beta, IdenticalTrainsGiveZero) {
  const auto s = beta_from_echo({two_point(55e-6, 55e-3, 0.6), two_point(55e-6, 55e-3, 0.6)});
  for (double b : s.beta) EXPECT_EQ(b, 0);
}

TEST(Beta, CarrPurcellPairWithCommonRelaxation) {
  const double T = 55e-3, T2 = 40e-3;
  auto end = [&](double tE) { return std::exp(-T / T2 - oracle::carr_purcell(D0, 7, tE, T)); };
  const auto s = beta_from_echo({two_point(110e-6, T, end(110e-6)), two_point(55e-6, T, end(55e-6))});
  ASSERT_EQ(s.beta.size(), 2u);
  EXPECT_EQ(s.echo_time[0], 55e-6);
  EXPECT_EQ(s.beta[0], 0);
  const double expected = std::pow(2.6752e8 * 7, 2) * D0 * T * (110e-6 * 110e-6 - 55e-6 * 55e-6) / 12;
  EXPECT_NEAR(s.beta[1], expected, 1e-12);
  EXPECT_NEAR(s.beta[1], 0.335, 0.03 * 0.335);
  EXPECT_NEAR(s.omega_m[1], pi / 110e-6, 1e-9);
}

TEST(Beta, TotalTimesMustAgree) {
  try {
    beta_from_echo({two_point(55e-6, 55e-3, 0.9), two_point(110e-6, 44e-3, 0.8)});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::mismatched_total_time);
  }
}

TEST(Beta, NonPositiveEchoIsDropped) {
  const auto s = beta_from_echo({two_point(55e-6, 55e-3, 0.9), two_point(110e-6, 55e-3, -0.01)});
  EXPECT_EQ(s.beta.size(), 1u);
  EXPECT_FALSE(s.flags.empty());
}

TEST(Beta, MonotoneOverSweepForRestrictedSpectrum) {
  const double T = 55e-3, a = 5e-6;
  std::vector<EchoTrain> trains;
  for (double tE : echo_time_sweep()) {
    const auto n = static_cast<std::size_t>(std::llround(T / tE));
    const auto s = build_cpmg_schedule(T / static_cast<double>(n), T);
    const double wm = pi * static_cast<double>(n) / T;
    const auto grid = linear_grid(0, 9 * wm, static_cast<std::size_t>(9 * wm / 12) + 1);
    DiffusionSpectrum d;
    d.omega = grid;
    for (double w : grid) d.D.push_back(oracle::slab_D(w, a, D0, 400));
    const double b = attenuation_exact(wavevector_spectrum(s, G7, H, T, grid), d);
    trains.push_back(two_point(T / static_cast<double>(n), s.total_duration(), std::exp(-b)));
  }
  const auto s = beta_from_echo(trains);
  ASSERT_EQ(s.beta.size(), 20u);
  for (std::size_t i = 1; i < s.beta.size(); ++i) EXPECT_GE(s.beta[i], s.beta[i - 1] - 1e-12) << i;
}

TEST(Attenuation, LowestHarmonicForFreeWater) {
  const double tE = 110e-6, T = 55e-3, wm = pi / tE;
  const double e = lowest_harmonic_exponent(D0, G7, H, wm, T);
  EXPECT_NEAR(e, oracle::lowest_harmonic(D0, 7, tE, T), 1e-12);
  EXPECT_NEAR(e, 0.4405, 0.001);
  EXPECT_NEAR(carr_purcell_exponent(D0, G7, H, tE, T), 0.447, 0.001);
  EXPECT_NEAR(e / carr_purcell_exponent(D0, G7, H, tE, T), 96 / std::pow(pi, 4), 1e-12);
  EXPECT_DOUBLE_EQ(attenuation_lowest_harmonic(0, G7, H, wm, T, 20e-3), std::exp(-T / 20e-3));
  EXPECT_NEAR(attenuation_lowest_harmonic(D0, G7, H, 1e12, T, 20e-3), std::exp(-T / 20e-3), 1e-12);
  EXPECT_THROW(lowest_harmonic_exponent(D0, G7, H, 0, T), Error);
}

TEST(Attenuation, ExactIntegralRecoversCarrPurcell) {
  const double tE = 110e-6, T = 55e-3, wm = pi / tE;
  const auto s = build_cpmg_schedule(tE, T);
  const auto grid = linear_grid(0, 100 * wm, 200001);
  const auto q = wavevector_spectrum(s, G7, H, T, grid);
  const double cp = oracle::carr_purcell(D0, 7, tE, T);
  EXPECT_NEAR(attenuation_exact(q, flat_spectrum(D0, grid)) / cp, 1.0, 0.01);
  EXPECT_EQ(attenuation_exact(q, flat_spectrum(0, grid)), 0);
  // Fundamental lobe alone.
  QSpectrum lobe;
  lobe.tau = T;
  for (std::size_t i = 0; i < grid.size() && grid[i] <= 2 * wm; ++i) {
    lobe.omega.push_back(grid[i]);
    lobe.power.push_back(q.power[i]);
  }
  EXPECT_NEAR(attenuation_exact(lobe, flat_spectrum(D0, grid)) / cp, oracle::odd_harmonic_fraction(1), 0.005);
  EXPECT_NEAR(oracle::odd_harmonic_fraction(1), 0.9855, 1e-4);
}

TEST(Attenuation, GridMustCoverWavevectorSpectrum) {
  const auto s = build_cpmg_schedule(110e-6, 5.5e-3);
  const auto q = wavevector_spectrum(s, G7, H, 5.5e-3, linear_grid(0, 1e5, 4001));
  EXPECT_THROW(attenuation_exact(q, flat_spectrum(D0, linear_grid(0, 5e4, 100))), Error);
}

TEST(ExtractD, InvertsLowestHarmonicKernel) {
  OTOCSeries s;
  s.tau = 55e-3;
  for (double tE : {55e-6, 110e-6, 1100e-6}) {
    s.echo_time.push_back(tE);
    s.omega_m.push_back(pi / tE);
    s.time.push_back(55e-3);
    s.beta.push_back(lowest_harmonic_exponent(D0, G7, H, pi / tE, 55e-3));
  }
  s.echo_time.push_back(220e-6);
  s.omega_m.push_back(pi / 220e-6);
  s.time.push_back(55e-3);
  s.beta.push_back(0);
  const auto d = extract_D_spectrum(s, G7, H, 55e-3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.D[i] / D0, 1.0, 1e-12);
  EXPECT_EQ(d.D[3], 0);
  EXPECT_TRUE(d.flags.empty());
  s.beta[3] = -0.01;
  const auto c = extract_D_spectrum(s, G7, H, 55e-3);
  EXPECT_EQ(c.D[3], 0);
  EXPECT_EQ(c.flags.size(), 1u);
}

TEST(ExtractD, SimulatedFreeWaterCarriesHarmonicSystematic) {
  const double tE = 110e-6, T = 11e-3;
  const auto s = build_cpmg_schedule(tE, T);
  EncodeOptions o;
  o.dt_max = 27.5e-6;
  const std::size_t N = 100000;
  const auto a = encode_walk({D0, 0, 0, N, 11, {}}, FreeSpace{}, s, G7, H, o);
  const EchoTrain t = make_train(s, a, infinity, {}, 0);
  const auto f = otoc_from_train(t);
  OTOCSeries last;
  last.tau = T;
  last.time = {T};
  last.echo_time = {tE};
  last.omega_m = {pi / tE};
  last.beta = {f.beta.back()};
  const double ratio = extract_D_spectrum(last, G7, H, T).D[0] / D0;
  // 1% closure plus three Monte Carlo standard errors of beta at this N.
  const double rel_se = std::sqrt((0.5 * (1 + std::exp(-4 * f.beta.back())) - std::exp(-2 * f.beta.back())) /
                                  static_cast<double>(N)) /
                        std::exp(-f.beta.back()) / f.beta.back();
  EXPECT_NEAR(ratio / (std::pow(pi, 4) / 96), 1.0, 0.01 + 3 * rel_se);
}

TEST(ExtractD, SlabDiffusivityRisesWithFrequency) {
  const double T = 5.5e-3;
  EncodeOptions o;
  o.dt_max = 5.5e-6;
  std::vector<EchoTrain> trains;
  for (double tE : {55e-6, 137.5e-6}) {
    const auto s = build_cpmg_schedule(tE, T);
    trains.push_back(make_train(s, encode_walk({D0, 0, 0, 20000, 12, {}}, Slab{1e-6, Axis::z}, s, G7, H, o),
                                infinity, {}, 0));
  }
  const auto d = extract_D_spectrum(beta_from_echo(trains, {BetaReference::absolute, infinity}), G7, H, T);
  ASSERT_EQ(d.D.size(), 2u);
  EXPECT_NEAR(modulation_nu(55e-6), 9090.9, 0.1);
  EXPECT_NEAR(modulation_nu(137.5e-6), 3636.4, 0.1);
  // Sorted by echo time: index 0 is 9.09 kHz.
  EXPECT_GT(d.D[0], d.D[1]);
}

TEST(Entropy, ReferenceBlockIsZeroAndDoublingIsLn2) {
  std::vector<BlockSample> s = {{0, 0, 9090, 1e-9}, {1, 0.055, 7272, 1e-9}, {2, 0.11, 5454, 2e-9}};
  const auto e = entropy_change(s);
  EXPECT_EQ(e.dS[0], 0);
  EXPECT_EQ(e.dS[1], 0);
  EXPECT_NEAR(e.dS[2], std::log(2.0), 1e-15);
}

TEST(Entropy, InvariantUnderGlobalRescaling) {
  std::vector<BlockSample> s, r;
  for (std::size_t b = 0; b < 14; ++b) {
    const double D = 1e-9 * (1 + 0.1 * std::sin(static_cast<double>(b)));
    s.push_back({b, 0.055 * b, 1000.0 * (1 + b % 7), D});
    r.push_back({b, 0.055 * b, 1000.0 * (1 + b % 7), 3.7 * D});
  }
  for (auto ref : {EntropyReference::first_block, EntropyReference::first_at_frequency}) {
    const auto a = entropy_change(s, ref), b = entropy_change(r, ref);
    for (std::size_t i = 0; i < a.dS.size(); ++i) EXPECT_NEAR(a.dS[i], b.dS[i], 1e-15);
  }
}

TEST(Entropy, PerFrequencyReference) {
  std::vector<BlockSample> s = {{0, 0, 9090, 1e-9}, {1, 0.055, 3636, 3e-9}, {2, 0.11, 3636, 6e-9}};
  const auto e = entropy_change(s, EntropyReference::first_at_frequency);
  EXPECT_EQ(e.dS[1], 0);
  EXPECT_NEAR(e.dS[2], std::log(2.0), 1e-15);
}

TEST(Entropy, NonPositiveDiffusivityIsRejected) {
  EXPECT_THROW(entropy_change({{0, 0, 9090, 0.0}}), Error);
  EXPECT_THROW(entropy_change({}), Error);
}

TEST(Entropy, BlockSamplesFromEchoTrain) {
  const auto s = entropy_schedule(1);
  EchoTrain t;
  t.times = {0};
  t.amplitude = {1};
  const double T2 = 30e-3;
  for (const auto& b : s.blocks) {
    const double wm = pi / b.echo_time;
    t.times.push_back(t.times.back() + b.duration());
    t.amplitude.push_back(std::exp(-b.duration() / T2 - lowest_harmonic_exponent(D0, G7, H, wm, b.duration())));
  }
  const auto samples = block_samples(s, t, G7, H, nullptr, T2);
  ASSERT_EQ(samples.size(), 7u);
  for (const auto& x : samples) EXPECT_NEAR(x.D / D0, 1.0, 1e-12);
  EXPECT_NEAR(samples[3].nu, 1 / (2 * 137.5e-6), 1e-9);
  t.amplitude[2] = -0.1;
  Flags f;
  EXPECT_EQ(block_samples(s, t, G7, H, &f, T2).size(), 6u);
  EXPECT_EQ(f.size(), 1u);
}

TEST(Heat, TrapezoidOverFrequency) {
  const auto nu = linear_grid(3.5e3, 9.5e3, 7);
  std::vector<double> zero(7, 0.0), c(7, 0.25), band;
  for (double v : nu) band.push_back(v < 5e3 ? 0.0 : 0.3);
  EXPECT_EQ(heat_over_T(nu, zero), 0);
  EXPECT_NEAR(heat_over_T(nu, c), 0.25 * 6e3, 1e-9);
  EXPECT_NEAR(heat_over_T(nu, band), 0.3 * 4.5e3, 1e-9);
  EXPECT_NEAR(heat_over_T({9.5e3, 3.5e3}, {1.0, 1.0}), 6e3, 1e-9);
  EXPECT_THROW(heat_over_T({1e3}, {0.1}), Error);
}

TEST(Lyapunov, ExactExponential) {
  const auto t = linear_grid(0, 0.02, 41);
  std::vector<double> F, C(41, 2.5);
  for (double x : t) F.push_back(std::exp(2 * 100 * x));
  const auto fit = lyapunov_fit(t, F, 0, 0.02);
  EXPECT_NEAR(fit.lambda / 100, 1.0, 1e-6);
  EXPECT_FALSE(fit.poor_fit);
  EXPECT_EQ(fit.n_points, 41u);
  EXPECT_NEAR(lyapunov_fit(t, C, 0, 0.02).lambda, 0, 1e-9);
  EXPECT_FALSE(lyapunov_fit(t, C, 0, 0.02).poor_fit);
}

TEST(Lyapunov, LinearGrowthIsFlagged) {
  const double tE = 110e-6;
  const auto s = build_cpmg_schedule(tE, 55e-3);
  std::vector<double> t, F;
  for (double x : s.echo_times()) {
    t.push_back(x);
    F.push_back(oracle::carr_purcell(D0, 7, tE, x));
  }
  EXPECT_TRUE(lyapunov_fit(t, F, 5e-3, 55e-3).poor_fit);
}

TEST(Lyapunov, WindowErrors) {
  const std::vector<double> t = {0, 1, 2, 3, 4}, F = {1, -1, 2, 3, 4};
  EXPECT_THROW(lyapunov_fit(t, F, 0, 4), Error);
  EXPECT_THROW(lyapunov_fit(t, F, 2, 3), Error);
}
