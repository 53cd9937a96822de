#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "closed_forms.hpp"
#include "sns/spectral_pressure.hpp"

namespace sns {
namespace {

double max_abs(const GridScalar& f) { return f.abs().maxCoeff(); }

// Random band-limited zero-mean scalar field with modes |kx|,|ky| <= band.
GridScalar random_band_limited(const SpectralGrid& grid, int band, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> d;
  GridScalar f = GridScalar::Zero(grid.size());
  for (int a = -band; a <= band; ++a)
    for (int b = -band; b <= band; ++b) {
      if (a == 0 && b == 0) continue;
      const double c = d(gen), s = d(gen);
      f += grid.sample([&](Point2 p) { return c * std::cos(a * p.x + b * p.y) + s * std::sin(a * p.x + b * p.y); });
    }
  return f;
}

GridVector random_vector_field(const SpectralGrid& grid, int band, unsigned seed) {
  return {random_band_limited(grid, band, seed), random_band_limited(grid, band, seed + 1)};
}

TEST(SpectralGrid, RejectsOddOrSmallResolution) {
  EXPECT_THROW(SpectralGrid(2), std::invalid_argument);
  EXPECT_THROW(SpectralGrid(7), std::invalid_argument);
  EXPECT_NO_THROW(SpectralGrid(4));
}

TEST(InvLaplacian, Eigenfunctions) {
  SpectralGrid grid(16);
  const GridScalar s = grid.sample([](Point2 p) { return std::sin(p.x); });
  EXPECT_LT(max_abs(inv_laplacian(grid, s) + s), 1e-13);
  const GridScalar cc = grid.sample([](Point2 p) { return std::cos(p.x) * std::cos(p.y); });
  EXPECT_LT(max_abs(inv_laplacian(grid, cc) + 0.5 * cc), 1e-13);
  EXPECT_EQ(max_abs(inv_laplacian(grid, GridScalar::Zero(grid.size()))), 0.0);
}

TEST(InvLaplacian, RejectsNonzeroMean) {
  SpectralGrid grid(8);
  const GridScalar f = grid.sample([](Point2 p) { return 1.0 + std::sin(p.y); });
  EXPECT_THROW(inv_laplacian(grid, f), std::invalid_argument);
}

TEST(InvLaplacian, RightInverseOnBandLimitedFields) {
  for (int n : {16, 32, 64}) {
    SpectralGrid grid(n);
    const GridScalar f = random_band_limited(grid, n / 4, 3);
    const GridScalar r = grid.laplacian(inv_laplacian(grid, f));
    EXPECT_LT(max_abs(r - f) / max_abs(f), 1e-10) << "N=" << n;
    EXPECT_LT(std::abs(inv_laplacian(grid, f).mean()), 1e-13);
  }
}

TEST(Leray, AnnihilatesGradientsAndKeepsSolenoidalFields) {
  SpectralGrid grid(16);
  const GridVector grad_cos = grid.sample([](Point2 p) { return Vec2(-std::sin(p.x), 0.0); });
  const GridVector l = leray_project(grid, grad_cos);
  EXPECT_LT(max_abs(l.x) + max_abs(l.y), 1e-13);

  const GridVector tg = grid.sample(testing::taylor_green().value);
  const GridVector ltg = leray_project(grid, tg);
  EXPECT_LT(max_abs(ltg.x - tg.x) + max_abs(ltg.y - tg.y), 1e-13);
}

TEST(Leray, IdempotentAndSolenoidalOnRandomFields) {
  SpectralGrid grid(32);
  const GridVector v = random_vector_field(grid, 6, 11);
  const GridVector once = leray_project(grid, v);
  const GridVector twice = leray_project(grid, once);
  const double scale = max_abs(once.x) + max_abs(once.y);
  EXPECT_LT((max_abs(once.x - twice.x) + max_abs(once.y - twice.y)) / scale, 1e-10);
  EXPECT_LT(max_abs(grid.divergence(once)) / scale, 1e-12);
}

TEST(PressureDet, WorkedExamples) {
  SpectralGrid grid(16);
  const GridVector u = grid.sample([](Point2 p) { return Vec2(std::sin(p.y), std::sin(p.x)); });
  const GridScalar expected = grid.sample([](Point2 p) { return std::cos(p.x) * std::cos(p.y); });
  EXPECT_LT(max_abs(pressure_det(grid, u) - expected), 1e-12);

  const GridVector shear = grid.sample([](Point2 p) { return Vec2(std::cos(p.y), 0.0); });
  EXPECT_LT(max_abs(pressure_det(grid, shear)), 1e-13);
  const GridVector c = grid.sample([](Point2) { return Vec2(0.4, -1.3); });
  EXPECT_LT(max_abs(pressure_det(grid, c)), 1e-13);
}

TEST(PressureDet, MatchesExplicitComposition) {
  SpectralGrid grid(32);
  const GridVector u = random_vector_field(grid, 4, 21);
  // Brute-force: form div(u tensor u) as a vector, then its divergence.
  const GridVector div_tensor{grid.dx(u.x * u.x) + grid.dy(u.x * u.y),
                              grid.dx(u.y * u.x) + grid.dy(u.y * u.y)};
  const GridScalar brute = -inv_laplacian(grid, grid.divergence(div_tensor));
  EXPECT_LT(max_abs(pressure_det(grid, u) - brute) / max_abs(brute), 1e-10);
}

TEST(PressureStoch, ExamplesAndDecomposition) {
  SpectralGrid grid(16);
  const GridVector tg = grid.sample(testing::taylor_green().value);
  const GridVector p0 = pressure_stoch(grid, tg);
  EXPECT_LT(max_abs(p0.x) + max_abs(p0.y), 1e-13);

  const GridVector g = grid.sample([](Point2 p) { return Vec2(std::sin(p.x), 0.0); });
  const GridVector pg = pressure_stoch(grid, g);
  EXPECT_LT(max_abs(pg.x + g.x) + max_abs(pg.y), 1e-13);

  SpectralGrid fine(32);
  const GridVector v = random_vector_field(fine, 5, 5);
  const GridVector phi = pressure_stoch(fine, v);
  const GridVector sum{v.x + phi.x, v.y + phi.y};
  const double scale = max_abs(v.x) + max_abs(v.y);
  EXPECT_LT(max_abs(fine.divergence(sum)) / scale, 1e-12);
  const GridVector leray = leray_project(fine, v);
  EXPECT_LT((max_abs(leray.x - phi.x - v.x) + max_abs(leray.y - phi.y - v.y)) / scale, 1e-12);
}

TEST(PressureStoch, Linear) {
  SpectralGrid grid(16);
  const GridVector g1 = random_vector_field(grid, 3, 1), g2 = random_vector_field(grid, 3, 7);
  const double a = 1.7, b = -0.6;
  const GridVector lhs = pressure_stoch(grid, {a * g1.x + b * g2.x, a * g1.y + b * g2.y});
  const GridVector p1 = pressure_stoch(grid, g1), p2 = pressure_stoch(grid, g2);
  const double scale = max_abs(lhs.x) + max_abs(lhs.y);
  EXPECT_LT((max_abs(lhs.x - a * p1.x - b * p2.x) + max_abs(lhs.y - a * p1.y - b * p2.y)) / scale, 1e-12);
}

TEST(MonitorPressureNorms, ZeroTrajectoryAndWorkedExample) {
  const auto space = make_space(8);
  SpectralGrid grid(transfer_resolution(8));
  const NoiseModel noise = make_default_family(2.0, 0.2, NoiseMode::additive);
  const std::vector<FeField> zero(3, FeField(space, FieldKind::velocity));
  const PressureNorms z = monitor_pressure_norms(zero, 0.1, noise, grid);
  EXPECT_EQ(z.deterministic, 0.0);
  EXPECT_GT(z.stochastic, 0.0);

  // u_1 = (sin y, sin x) has pi_det = cos x cos y; |grad pi_det|^2 integrated by
  // the midpoint rule, exact for low-order trigonometric data.
  double target = 0.0;
  constexpr int kQ = 64;
  for (int i = 0; i < kQ; ++i)
    for (int j = 0; j < kQ; ++j) {
      const double x = -kPi + kTwoPi * (i + 0.5) / kQ, y = -kPi + kTwoPi * (j + 0.5) / kQ;
      const double sx = std::sin(x), cx = std::cos(x), sy = std::sin(y), cy = std::cos(y);
      target += (sx * sx * cy * cy + cx * cx * sy * sy) * (kTwoPi / kQ) * (kTwoPi / kQ);
    }
  EXPECT_NEAR(target, 2.0 * kPi * kPi, 1e-10);

  const VectorFunction u{[](Point2 p) { return Vec2(std::sin(p.y), std::sin(p.x)); }, {}};
  double prev = 0.0;
  for (int n : {4, 8, 16}) {
    const auto s = make_space(n);
    SpectralGrid g(transfer_resolution(n));
    const std::vector<FeField> traj{FeField(s, FieldKind::velocity), interpolate(s, u)};
    const double err = std::abs(monitor_pressure_norms(traj, 1.0, noise, g).deterministic - target);
    if (prev > 0.0) EXPECT_LT(err, 0.5 * prev) << "n=" << n;
    prev = err;
  }
  EXPECT_LT(prev / target, 1e-2);

}

TEST(MonitorPressureNorms, LinearInDt) {
  const auto space = make_space(4);
  SpectralGrid grid(transfer_resolution(4));
  const NoiseModel noise = make_default_family(2.0, 0.3, NoiseMode::nonlinear_mult, 4);
  const VectorFunction u{[](Point2 p) { return Vec2(std::sin(p.y), std::sin(p.x)); }, {}};
  const std::vector<FeField> traj{interpolate(space, testing::taylor_green()), interpolate(space, u)};
  const PressureNorms a = monitor_pressure_norms(traj, 0.1, noise, grid);
  const PressureNorms b = monitor_pressure_norms(traj, 0.2, noise, grid);
  EXPECT_NEAR(b.deterministic, 2.0 * a.deterministic, 1e-12 * b.deterministic);
  EXPECT_NEAR(b.stochastic, 2.0 * a.stochastic, 1e-12 * b.stochastic);
}

}  // namespace
}  // namespace sns
