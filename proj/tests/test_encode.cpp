#include <gtest/gtest.h>

#include <cmath>

#include "mgse/encode.hpp"
#include "mgse/schedule.hpp"
#include "mgse/spectra.hpp"
#include "oracles.hpp"

using namespace mgse;

namespace {

constexpr double D0 = 2.3e-9;
const GradientSpec G7{{0, 0, 7}};
const PhysicalConstants H{};

double trapezoid(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi) {
  double acc = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i - 1] >= lo && x[i] <= hi) acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return acc;
}

}  // namespace

TEST(Schedule, CpmgEchoCounts) {
  EXPECT_EQ(build_cpmg_schedule(55e-6, 55e-3).n_echoes(), 1000u);
  EXPECT_EQ(build_cpmg_schedule(1100e-6, 55e-3).n_echoes(), 50u);
  EXPECT_EQ(build_cpmg_schedule(55e-3, 55e-3).n_echoes(), 1u);
  EXPECT_THROW(build_cpmg_schedule(60e-3, 55e-3), Error);
  const auto s = build_cpmg_schedule(110e-6, 55e-3);
  EXPECT_NEAR(s.total_duration(), 55e-3, 1e-15);
  const auto p = s.pulse_times(), e = s.echo_times();
  ASSERT_EQ(p.size(), e.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_LT(p[i], e[i]);
    if (i) {
      EXPECT_GT(p[i], e[i - 1]);
    }
  }
}

TEST(Schedule, EntropyCycle) {
  const auto s = entropy_schedule();
  ASSERT_EQ(s.blocks.size(), 140u);
  const double tE[7] = {55e-6, 68.75e-6, 55e-3 / 600, 137.5e-6, 55e-3 / 600, 68.75e-6, 55e-6};
  const std::size_t n[7] = {1000, 800, 600, 400, 600, 800, 1000};
  for (std::size_t b = 0; b < 140; ++b) {
    EXPECT_NEAR(s.blocks[b].echo_time, tE[b % 7], 1e-15);
    EXPECT_EQ(s.blocks[b].n_echoes, n[b % 7]);
    EXPECT_NEAR(s.blocks[b].duration(), 55e-3, 1e-15);
  }
  EXPECT_NEAR(s.blocks[3].echo_time, 137.5e-6, 1e-15);
  EXPECT_NEAR(s.blocks[2].echo_time * 1e6, 91.67, 0.005);
}

TEST(Schedule, ConcatenationIsAdditive) {
  auto a = build_cpmg_schedule(55e-6, 11e-3);
  const auto b = build_cpmg_schedule(220e-6, 22e-3);
  const double da = a.total_duration();
  const std::size_t na = a.n_echoes();
  a.append(b);
  EXPECT_NEAR(a.total_duration(), da + b.total_duration(), 1e-15);
  EXPECT_EQ(a.n_echoes(), na + b.n_echoes());
  EXPECT_EQ(a.echo_times().size(), a.n_echoes());
}

TEST(Modulation, SingleEchoFlipsOnce) {
  const auto f = modulation_function(build_cpmg_schedule(100e-6, 100e-6));
  EXPECT_EQ(f(0), 1);
  EXPECT_EQ(f(49.9e-6), 1);
  EXPECT_EQ(f(50.1e-6), -1);
  EXPECT_EQ(f(100e-6), -1);
}

TEST(Modulation, OneFlipPerEchoAndZeroMeanPerPeriod) {
  const double tE = 55e-6;
  const auto s = build_cpmg_schedule(tE, 55e-3);
  const auto f = modulation_function(s);
  EXPECT_EQ(f.flip_count(), 1000u);
  const std::size_t per_half = 50;
  const double h = tE / (2 * per_half);
  std::size_t flips = 0;
  double prev = f(0.5 * h), integral = 0;
  for (std::size_t i = 0; i < 2 * per_half * 1000; ++i) {
    const double v = f((static_cast<double>(i) + 0.5) * h);
    flips += v != prev;
    prev = v;
    if (i < 4 * per_half) integral += v * h;  // one square-wave period (2 t_E)
  }
  EXPECT_EQ(flips, 1000u);
  EXPECT_NEAR(integral, 0, 1e-15);
}

TEST(WaveVector, TriangleRefocusesAtEchoes) {
  const double tE = 110e-6;
  const auto s = build_cpmg_schedule(tE, 55e-3);
  const auto q = wavevector(s, G7, H);
  EXPECT_NEAR(q.peak(tE), 2.6752e8 * 7 * 5.5e-5, 1e-6);
  EXPECT_NEAR(q.peak(tE), 1.03e5, 0.01e5);
  for (double t : s.echo_times()) EXPECT_NEAR(q(t), 0, 1e-9 * q.peak(tE));
  double mx = 0;
  for (int i = 0; i < 20000; ++i) mx = std::max(mx, std::abs(q(i * 55e-3 / 20000)));
  EXPECT_NEAR(mx, q.peak(tE), 1e-6 * q.peak(tE));
  // Period 2 t_E.
  EXPECT_NEAR(q(0.3 * tE), q(2.3 * tE), 1e-9 * q.peak(tE));
  EXPECT_NEAR(q(0.3 * tE), -q(1.3 * tE), 1e-9 * q.peak(tE));
  const auto q0 = wavevector(s, GradientSpec{{0, 0, 0}}, H);
  EXPECT_EQ(q0(0.25 * tE), 0);
}

TEST(WaveVectorSpectrum, FundamentalLobeCarriesLowestHarmonicKernel) {
  const double tE = 110e-6, tau = 55e-3, wm = pi / tE;
  const auto s = build_cpmg_schedule(tE, tau);
  const auto grid = linear_grid(0, 4 * wm, 40001);
  const auto q = wavevector_spectrum(s, G7, H, tau, grid);
  // Maximum at the square-wave fundamental.
  const auto at = std::max_element(q.power.begin(), q.power.end()) - q.power.begin();
  EXPECT_NEAR(grid[at], 2.856e4, 0.002e4);
  const double lobe1 = trapezoid(grid, q.power, 0, 2 * wm);
  const double lobe3 = trapezoid(grid, q.power, 2 * wm, 4 * wm);
  // (1/pi) * lobe * D0 against 8 g^2 G^2 D0 tau / (pi^2 wm^2)
  EXPECT_NEAR(lobe1 * D0 / pi / oracle::lowest_harmonic(D0, 7, tE, tau), 1.0, 0.01);
  // |q|^2 carries an extra 1/n^2 over the square wave.
  EXPECT_NEAR(lobe3 / lobe1, 1.0 / 81, 0.05 / 81);
  for (double v : wavevector_spectrum(s, GradientSpec{{0, 0, 0}}, H, tau, grid).power) EXPECT_EQ(v, 0);
}

TEST(WaveVectorSpectrum, ModulationLobesFollowSquareWaveCoefficients) {
  const double tE = 110e-6, tau = 55e-3, wm = pi / tE;
  const auto s = build_cpmg_schedule(tE, tau);
  const auto grid = linear_grid(0, 4 * wm, 40001);
  const auto f = modulation_spectrum(s, tau, grid);
  const double r = trapezoid(grid, f.power, 2 * wm, 4 * wm) / trapezoid(grid, f.power, 0, 2 * wm);
  EXPECT_NEAR(r, 1.0 / 9, 0.05 / 9);
}

TEST(WaveVectorSpectrum, CoarseGridIsRejected) {
  const double tE = 110e-6, tau = 55e-3;
  const auto s = build_cpmg_schedule(tE, tau);
  try {
    wavevector_spectrum(s, G7, H, tau, linear_grid(0, 3 * pi / tE, 200));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::grid_too_coarse);
  }
}

TEST(Encode, CoercedStepLandsOnPulses) {
  for (double tE : {55e-6, 68.75e-6, 55e-3 / 600, 137.5e-6, 1100e-6}) {
    const double dt = coerce_dt(tE, 1e-6);
    EXPECT_LE(dt, 1e-6);
    EXPECT_NO_THROW(steps_per_half(tE, dt));
  }
  EXPECT_THROW(steps_per_half(110e-6, 0.7e-6), Error);
}

TEST(Encode, StaticWalkersRefocus) {
  const auto s = build_cpmg_schedule(110e-6, 2.2e-3);
  const auto e = simulate_ensemble({1e-300, 5.5e-6, 400, 300, 3, {}}, Slab{1e-6, Axis::z});
  const auto p = encode_phase(e, s, G7, H);
  for (double v : p.phases) EXPECT_NEAR(v, 0, 1e-9);
}

TEST(Encode, StoredAndStreamedPhasesAgree) {
  const double tE = 110e-6;
  const auto s = build_cpmg_schedule(tE, 1.1e-3);
  const Geometry g = Slab{2e-6, Axis::z};
  const WalkParams p{D0, 5.5e-6, 200, 700, 31, {}};
  const auto stored = average(encode_phase(simulate_ensemble(p, g), s, G7, H));
  EncodeOptions o;
  o.dt_max = 5.5e-6;
  o.bridge = BridgeCorrection::off;
  const auto streamed = encode_walk(p, g, s, G7, H, o);
  ASSERT_EQ(stored.signal.size(), streamed.signal.size());
  for (std::size_t k = 0; k < stored.signal.size(); ++k) EXPECT_NEAR(std::abs(stored.signal[k] - streamed.signal[k]), 0, 1e-12);
}

TEST(Encode, ScheduleLongerThanEnsembleIsRejected) {
  const auto s = build_cpmg_schedule(110e-6, 1.1e-3);
  const auto e = simulate_ensemble({D0, 5.5e-6, 50, 10, 1, {}}, FreeSpace{});
  EXPECT_THROW(encode_phase(e, s, G7, H), Error);
  const auto f = simulate_ensemble({D0, 0.7e-6, 5000, 2, 1, {}}, FreeSpace{});
  try {
    encode_phase(f, s, G7, H);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::time_grid_mismatch);
  }
}

TEST(Encode, UniformDriftPhase) {
  const double tE = 110e-6, v = 1e-3;
  const auto s = build_cpmg_schedule(tE, 4 * tE);
  EncodeOptions o;
  o.dt_max = 1.1e-6;
  const auto a = encode_walk({1e-300, 0, 0, 1, 5, {0, 0, v}}, FreeSpace{}, s, G7, H, o);
  const double first = -2.6752e8 * 7 * v * tE * tE / 4;
  EXPECT_NEAR(a.mean_phase[1] / first, 1.0, 1e-9);
  // Odd echoes repeat the one-echo phase, even echoes refocus it.
  EXPECT_NEAR(a.mean_phase[2], 0, 1e-9 * std::abs(first));
  EXPECT_NEAR(a.mean_phase[3] / first, 1.0, 1e-9);
  EXPECT_NEAR(a.mean_phase[4], 0, 1e-9 * std::abs(first));
  EXPECT_NEAR(std::arg(a.signal[1]) / first, 1.0, 1e-9);
}

TEST(Encode, DriftFreeSlabHasNoMeanPhase) {
  const auto s = build_cpmg_schedule(110e-6, 1.1e-3);
  EncodeOptions o;
  o.dt_max = 5.5e-6;
  const auto a = encode_walk({D0, 0, 0, 100000, 6, {}}, Slab{1e-6, Axis::z}, s, G7, H, o);
  for (std::size_t k = 1; k < a.times.size(); ++k) {
    const double se = std::sqrt(a.phase_variance[k] / 100000);
    EXPECT_LT(std::abs(a.mean_phase[k]), 3 * se) << k;
  }
}

TEST(Encode, FreeDiffusionMatchesCarrPurcell) {
  const double tE = 110e-6, T = 11e-3;
  const auto s = build_cpmg_schedule(tE, T);
  EncodeOptions o;
  o.dt_max = 5.5e-6;
  const auto a = encode_walk({D0, 0, 0, 100000, 7, {}}, FreeSpace{}, s, G7, H, o);
  EXPECT_NEAR(-std::log(a.signal.back().real()) / oracle::carr_purcell(D0, 7, tE, T), 1.0, 0.02);
}

TEST(Encode, GaussianRegimeMatchesCumulant) {
  const double tE = 110e-6, T = 11e-3, wm = pi / tE;
  ASSERT_LT(std::pow(2.6752e8 * 7, 2) * D0 * std::pow(tE, 3), 1);
  const auto s = build_cpmg_schedule(tE, T);
  EncodeOptions o;
  o.dt_max = 27.5e-6;
  const auto a = encode_walk({D0, 0, 0, 100000, 8, {}}, FreeSpace{}, s, G7, H, o);
  const auto grid = linear_grid(0, 12 * wm, 8001);
  const double beta = attenuation_exact(wavevector_spectrum(s, G7, H, T, grid), flat_spectrum(D0, grid));
  EXPECT_NEAR(-std::log(std::abs(a.signal.back())) / beta, 1.0, 0.02);
}

TEST(Encode, RestrictedSlabMatchesCovarianceTheory) {
  const double a = 1e-6, tE = 110e-6;
  const int n = 20;
  const auto s = build_cpmg_schedule(tE, n * tE);
  EncodeOptions o;
  o.dt_max = 1.1e-6;
  const auto e = encode_walk({D0, 0, 0, 20000, 9, {}}, Slab{a, Axis::z}, s, G7, H, o);
  const double var = oracle::slab_cpmg_phase_variance(a, D0, 7, tE, n);
  EXPECT_NEAR(e.phase_variance.back() / var, 1.0, 0.05);
}

TEST(Encode, ThreadCountDoesNotChangeResult) {
  const auto s = build_cpmg_schedule(55e-6, 2.2e-3);
  EncodeOptions o;
  o.dt_max = 5.5e-6;
  const WalkParams p{D0, 0, 0, 3000, 10, {}};
  const Geometry g = Cylinder{2e-6, Axis::x};
  o.exec.threads = 1;
  const auto a = encode_walk(p, g, s, G7, H, o);
  o.exec.threads = 4;
  const auto b = encode_walk(p, g, s, G7, H, o);
  o.exec.threads = 8;
  const auto c = encode_walk(p, g, s, G7, H, o);
  EXPECT_EQ(a.signal, b.signal);
  EXPECT_EQ(a.signal, c.signal);
}

TEST(Synthesis, NoGradientGivesPureRelaxation) {
  const auto s = build_cpmg_schedule(110e-6, 55e-3);
  const EchoTrain t = make_train(s, unencoded(s), 10e-3, {}, 1);
  for (std::size_t k = 0; k < t.times.size(); ++k) {
    EXPECT_DOUBLE_EQ(t.amplitude[k].real(), std::exp(-t.times[k] / 0.01));
    EXPECT_EQ(t.amplitude[k].imag(), 0);
  }
}

TEST(Synthesis, StaticSpinsRefocusToRelaxationSum) {
  const auto s = build_cpmg_schedule(220e-6, 22e-3);
  const auto e = simulate_ensemble({1e-300, 11e-6, 2000, 200, 4, {}}, Sphere{1e-6});
  const auto a = average(encode_phase(e, s, G7, H));
  PopulationModel m;
  m.populations = {{0.3, 5e-3, a}, {0.7, 40e-3, a}};
  const EchoTrain t = synthesize_echo_train(m, {}, 2);
  EXPECT_DOUBLE_EQ(t.amplitude[0].real(), 1.0);
  for (std::size_t k = 0; k < t.times.size(); ++k)
    EXPECT_NEAR(std::abs(t.amplitude[k]), 0.3 * std::exp(-t.times[k] / 5e-3) + 0.7 * std::exp(-t.times[k] / 40e-3), 1e-12);
}

TEST(Synthesis, ModelErrors) {
  const auto s = build_cpmg_schedule(110e-6, 1.1e-3);
  PopulationModel m;
  EXPECT_THROW(synthesize_echo_train(m, {}, 1), Error);
  m.populations = {{0.5, 1, unencoded(s)}, {0.4, 1, unencoded(s)}};
  EXPECT_THROW(synthesize_echo_train(m, {}, 1), Error);
  m.populations = {{1.0, 1, EchoAverage{}}};
  EXPECT_THROW(synthesize_echo_train(m, {}, 1), Error);
}

TEST(Synthesis, NoiseScalesWithTransients) {
  const auto s = build_cpmg_schedule(55e-6, 55e-3);
  NoiseSpec n{0.05, 128, 0, true};
  const EchoTrain t = make_train(s, unencoded(s), infinity, n, 3);
  double ss = 0;
  for (std::size_t k = 1; k < t.times.size(); ++k) ss += std::pow(t.amplitude[k].imag(), 2);
  const double sd = std::sqrt(ss / (t.times.size() - 1));
  EXPECT_NEAR(sd / (0.05 / std::sqrt(128.0)), 1.0, 0.1);
  EXPECT_DOUBLE_EQ(t.noise_sigma, 0.05 / std::sqrt(128.0));
  for (const auto& x : t.amplitude) EXPECT_LE(std::abs(x), 1 + 5 * 0.05 / std::sqrt(128.0) + 1e-12);
  // Same seed, same noise.
  EXPECT_EQ(t.amplitude, make_train(s, unencoded(s), infinity, n, 3).amplitude);
}

TEST(Synthesis, PhaseCyclingCancelsReceiverOffset) {
  const auto s = build_cpmg_schedule(110e-6, 1.1e-3);
  const EchoTrain even = make_train(s, unencoded(s), infinity, {0, 128, 0.02, true}, 1);
  const EchoTrain odd = make_train(s, unencoded(s), infinity, {0, 3, 0.02, true}, 1);
  const EchoTrain off = make_train(s, unencoded(s), infinity, {0, 128, 0.02, false}, 1);
  EXPECT_DOUBLE_EQ(even.amplitude[5].real(), 1.0);
  EXPECT_NEAR(odd.amplitude[5].real(), 1.0 + 0.02 / 3, 1e-15);
  EXPECT_NEAR(off.amplitude[5].real(), 1.02, 1e-15);
}
