#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mgse/walk.hpp"
#include "oracles.hpp"

using namespace mgse;

namespace {

constexpr double D0 = 2.3e-9;

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

bool all_contained(const TrajectoryEnsemble& e, const Geometry& g) {
  for (std::size_t w = 0; w < e.n_walkers; ++w)
    for (std::size_t k = 0; k <= e.n_steps; ++k) {
      const auto* t = std::get_if<TwoSite>(&g);
      const SiteGeometry s = t ? t->sites[e.sites[w * (e.n_steps + 1) + k]] : as_site(g);
      if (!contains(s, e.position(w, k))) return false;
    }
  return true;
}

}  // namespace

TEST(Geometry, ValidGeometriesHaveNoViolations) {
  EXPECT_TRUE(violations(Geometry{FreeSpace{}}).empty());
  EXPECT_TRUE(violations(Geometry{Slab{1e-6, Axis::z}}).empty());
  EXPECT_TRUE(violations(Geometry{Cylinder{5e-6, Axis::x}}).empty());
  EXPECT_TRUE(violations(Geometry{Sphere{1e-6}}).empty());
  EXPECT_TRUE(violations(Geometry{CageLattice{0.48e-9, 1.84e-9, 0.3e-9, 4e-9}}).empty());
  EXPECT_TRUE(violations(Geometry{TwoSite{{Slab{1e-6}, FreeSpace{}}, 100, {0.3, 0.7}}}).empty());
}

TEST(Geometry, InvalidGeometriesAreListed) {
  EXPECT_EQ(violations(Geometry{Slab{-1e-6}}).size(), 1u);
  EXPECT_EQ(violations(Geometry{Sphere{0}}).size(), 1u);
  // Window wider than the small cage.
  EXPECT_FALSE(violations(Geometry{CageLattice{0.48e-9, 1.84e-9, 0.6e-9, 4e-9}}).empty());
  EXPECT_FALSE(violations(Geometry{TwoSite{{FreeSpace{}, FreeSpace{}}, -1, {0.5, 0.5}}}).empty());
  EXPECT_THROW(validate(Geometry{Cylinder{-2}}), Error);
}

TEST(Walk, StepGuardRejectsCoarseSteps) {
  const Geometry slab = Slab{1e-6};
  // sqrt(2 D0 dt) = 0.21 um > 0.2 um
  try {
    check_step(D0, 1e-5, slab);
    FAIL() << "expected step_too_large";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::step_too_large);
  }
  EXPECT_NO_THROW(check_step(D0, 8e-6, slab));
  EXPECT_NO_THROW(check_step(D0, 1.0, FreeSpace{}));
}

TEST(Walk, ZeroWalkersIsAnError) {
  try {
    simulate_ensemble({D0, 1e-6, 10, 0, 1, {}}, FreeSpace{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_input);
  }
}

TEST(Walk, ZeroStepsKeepsInitialDraw) {
  const Geometry g = Sphere{1e-6};
  const auto e = simulate_ensemble({D0, 1e-6, 0, 50, 9, {}}, g);
  for (std::size_t w = 0; w < 50; ++w) {
    Walker ref(g, D0, {0, 0, 0}, 9, w);
    EXPECT_EQ(e.position(w, 0), ref.position());
  }
}

TEST(Walk, ContainmentHoldsInEveryGeometry) {
  const std::vector<std::pair<Geometry, double>> cases{
      {Slab{1e-6, Axis::y}, 5e-6},
      {Cylinder{1e-6, Axis::z}, 5e-6},
      {Sphere{1e-6}, 5e-6},
      {CageLattice{0.48e-9, 1.84e-9, 0.3e-9, 4e-9}, 1e-13},
      {TwoSite{{Sphere{1e-6}, Slab{2e-6}}, 2000, {0.4, 0.6}}, 5e-6},
  };
  for (const auto& [g, dt] : cases) {
    const auto e = simulate_ensemble({D0, dt, 400, 200, 5, {}}, g);
    EXPECT_TRUE(all_contained(e, g)) << tag(g);
  }
}

TEST(Walk, EnsembleIndependentOfThreadCount) {
  const Geometry g = TwoSite{{Cylinder{1e-6}, FreeSpace{}}, 300, {0.5, 0.5}};
  const WalkParams p{D0, 2e-6, 200, 1500, 77, {}};
  const auto a = simulate_ensemble(p, g, {1});
  const auto b = simulate_ensemble(p, g, {4});
  const auto c = simulate_ensemble(p, g, {8});
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.positions, c.positions);
  EXPECT_EQ(a.sites, c.sites);
}

TEST(Walk, FreeMsdFollowsEinsteinRelation) {
  const double dt = 1e-6;
  const auto e = simulate_ensemble({D0, dt, 100, 40000, 11, {}}, FreeSpace{});
  for (Axis a : {Axis::x, Axis::y, Axis::z}) {
    const Series s = msd(e, a);
    EXPECT_EQ(s.value[0], 0.0);
    const double slope = least_squares_slope(s.t, s.value);
    EXPECT_NEAR(slope / (2 * D0), 1.0, 0.02) << to_string(a);
  }
}

TEST(Walk, FreeMeanDisplacementVanishes) {
  const auto e = simulate_ensemble({D0, 1e-6, 100, 20000, 12, {}}, FreeSpace{});
  double m = 0;
  for (std::size_t w = 0; w < e.n_walkers; ++w) m += e.at(w, 100, 2);
  m /= static_cast<double>(e.n_walkers);
  const double sd = std::sqrt(2 * D0 * 100e-6 / static_cast<double>(e.n_walkers));
  EXPECT_LT(std::abs(m), 4 * sd);
}

TEST(Walk, SlabMsdSaturatesAtSixthOfWidthSquared) {
  const double a = 1.84e-9, dt = 1e-11;
  const auto e = simulate_ensemble({D0, dt, 600, 8000, 13, {}}, Slab{a, Axis::z});
  const Series s = msd(e, Axis::z);
  // Average over t > 5 a^2 / (2 D0).
  const double t_sat = 5 * a * a / (2 * D0);
  double acc = 0;
  int n = 0;
  for (std::size_t k = 0; k < s.t.size(); ++k)
    if (s.t[k] > t_sat) {
      acc += s.value[k];
      ++n;
    }
  ASSERT_GT(n, 100);
  EXPECT_NEAR(acc / n / (a * a / 6), 1.0, 0.02);
  // Early times follow the eigenmode series.
  EXPECT_NEAR(s.value[20] / oracle::slab_msd(s.t[20], a, D0), 1.0, 0.05);
}

TEST(Walk, MsdIsMonotoneUpToNoise) {
  const auto e = simulate_ensemble({D0, 2e-6, 300, 4000, 14, {}}, Cylinder{1e-6, Axis::z});
  const Series s = msd(e, Axis::x);
  for (std::size_t k = 10; k < s.value.size(); ++k) EXPECT_GT(s.value[k], 0.9 * s.value[k / 2]);
}

TEST(Vacf, FreeWalkIsWhite) {
  const double dt = 1e-6;
  const auto e = simulate_ensemble({D0, dt, 20, 100000, 15, {}}, FreeSpace{});
  const VacfSeries v = vacf(e, Axis::z, Axis::z, 10 * dt);
  ASSERT_EQ(v.values.size(), 11u);
  // Per-step displacement / dt has variance 2 D0 / dt.
  EXPECT_NEAR(v.values[0] / (2 * D0 / dt), 1.0, 0.02);
  for (std::size_t k = 1; k < v.values.size(); ++k) EXPECT_LT(std::abs(v.values[k]), 0.02 * v.values[0]);
  // Trapezoid integral over >= 10 dt gives D0.
  double gk = 0.5 * (v.values.front() + v.values.back());
  for (std::size_t k = 1; k + 1 < v.values.size(); ++k) gk += v.values[k];
  EXPECT_NEAR(gk * dt / D0, 1.0, 0.02);
}

TEST(Vacf, SlabShowsNegativeWallLobe) {
  const double a = 1e-6, dt = 2e-6;
  const auto e = simulate_ensemble({D0, dt, 1000, 1000, 16, {}}, Slab{a, Axis::z});
  const VacfSeries v = vacf(e, Axis::z, Axis::z, 1e-3);
  EXPECT_GT(v.values[0], 0);
  // Wall rebounds: the lag sum over ~a^2/D0 is strongly negative.
  double lobe = 0;
  const auto m = static_cast<std::size_t>(a * a / D0 / dt);
  for (std::size_t k = 1; k <= m; ++k) lobe += v.values[k];
  EXPECT_LT(lobe, -0.3 * v.values[0]);
}

TEST(Vacf, ScalesWithDiffusivity) {
  const auto a = simulate_ensemble({D0, 1e-6, 50, 200, 17, {}}, FreeSpace{});
  const auto b = simulate_ensemble({D0 * 1e-20, 1e-6, 50, 200, 17, {}}, FreeSpace{});
  const auto va = vacf(a, Axis::x, Axis::x, 2e-5), vb = vacf(b, Axis::x, Axis::x, 2e-5);
  for (std::size_t k = 0; k < va.values.size(); ++k) EXPECT_NEAR(vb.values[k], 1e-20 * va.values[k], 1e-9 * std::abs(va.values[0]) * 1e-20);
}

TEST(Vacf, CrossComponentIsSymmetric) {
  const auto e = simulate_ensemble({D0, 1e-6, 64, 300, 18, {}}, Sphere{1e-6});
  const auto xy = vacf(e, Axis::x, Axis::y, 3e-5), yx = vacf(e, Axis::y, Axis::x, 3e-5);
  for (std::size_t k = 0; k < xy.values.size(); ++k) EXPECT_NEAR(xy.values[k], yx.values[k], 1e-9 * xy.values.size() * std::abs(xy.values[0]) + 1e-30);
}

TEST(Vacf, WindowBeyondDurationIsRejected) {
  const auto e = simulate_ensemble({D0, 1e-6, 10, 5, 1, {}}, FreeSpace{});
  try {
    vacf(e, Axis::z, Axis::z, 1e-3);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::window_exceeded);
  }
}

TEST(TwoSite, NoExchangeMatchesIndependentSites) {
  const double a = 1e-6, dt = 2e-6;
  const std::size_t n = 300, N = 20000;
  const Geometry two = TwoSite{{Slab{a, Axis::z}, FreeSpace{}}, 0, {0.5, 0.5}};
  const auto e = simulate_ensemble({D0, dt, n, N, 19, {}}, two);
  const auto slab = simulate_ensemble({D0, dt, n, N / 2, 20, {}}, Slab{a, Axis::z});
  const auto free = simulate_ensemble({D0, dt, n, N / 2, 21, {}}, FreeSpace{});
  std::array<double, 2> sq{0, 0}, count{0, 0};
  for (std::size_t w = 0; w < N; ++w) {
    const int s = e.sites[w * (n + 1)];
    // Sites never change at k = 0.
    ASSERT_EQ(s, e.sites[w * (n + 1) + n]);
    const double d = e.at(w, n, 2) - e.at(w, 0, 2);
    sq[s] += d * d;
    count[s] += 1;
  }
  EXPECT_NEAR(count[0] / N, 0.5, 0.02);
  EXPECT_NEAR(sq[0] / count[0] / msd(slab, Axis::z).value[n], 1.0, 0.05);
  EXPECT_NEAR(sq[1] / count[1] / msd(free, Axis::z).value[n], 1.0, 0.05);
}

TEST(TwoSite, OccupancyStaysStationaryUnderExchange) {
  const Geometry two = TwoSite{{Sphere{1e-6}, Sphere{2e-6}}, 1000, {0.3, 0.7}};
  const auto e = simulate_ensemble({D0, 5e-6, 400, 4000, 22, {}}, two);
  double late = 0;
  std::size_t flips = 0;
  for (std::size_t w = 0; w < e.n_walkers; ++w) {
    late += e.sites[w * 401 + 400] == 0;
    for (std::size_t k = 1; k <= 400; ++k) flips += e.sites[w * 401 + k] != e.sites[w * 401 + k - 1];
  }
  EXPECT_NEAR(late / 4000, 0.3, 0.03);
  // Relaxation rate k leaves site s at k * weights[1-s]: mean flips per walker = 2 k w0 w1 T.
  const double expected = 2 * 1000 * 0.3 * 0.7 * 2e-3;
  EXPECT_NEAR(static_cast<double>(flips) / 4000 / expected, 1.0, 0.06);
}
