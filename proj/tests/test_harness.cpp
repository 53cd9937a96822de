#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "closed_forms.hpp"
#include "sns/harness.hpp"

namespace sns {
namespace {

constexpr double kPi = std::numbers::pi;

Trajectory fields_only(const std::vector<FeField>& iterates, double dt) {
  Trajectory t;
  t.dt = dt;
  t.velocity = iterates;
  t.diagnostics.resize(iterates.size() - 1);
  return t;
}

Trajectory stats_only(const std::vector<double>& gradient, const std::vector<double>& energy, double dt) {
  Trajectory t;
  t.dt = dt;
  for (std::size_t m = 0; m < gradient.size(); ++m) {
    StepDiagnostics d;
    d.gradient = gradient[m];
    d.energy = energy.empty() ? 0.0 : energy[m];
    t.diagnostics.push_back(d);
  }
  return t;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sns_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentConfig tiny_stochastic() {
  ExperimentConfig c;
  c.levels = {{4, 2}, {4, 4}, {4, 8}};
  c.reference = {4, 16};
  c.paths = 3;
  c.final_time = 0.5;
  c.noise = {4, 2.0, 0.3, NoiseMode::additive};
  c.threads = 1;
  return c;
}

// ---------------------------------------------------------------- error_norm

TEST(ErrorNorm, IdenticalTrajectoriesGiveZero) {
  auto space = make_space(4);
  const FeField u = interpolate(space, testing::taylor_green(0.3));
  const Trajectory t = fields_only({u, u, u}, 0.5);
  EXPECT_EQ(error_norm(t, t), 0.0);
}

TEST(ErrorNorm, ConstantErrorHasNoGradientPart) {
  auto space = make_space(4);
  const FeField zero(space, FieldKind::velocity);
  const FeField c = interpolate(space, testing::constant_field(0.5, -1.5));
  const double l2 = (0.25 + 2.25) * 4.0 * kPi * kPi;
  const double e = error_norm(fields_only({zero, c, c, c}, 0.25), fields_only({zero, zero, zero, zero}, 0.25));
  EXPECT_NEAR(e, l2, 1e-10 * l2);
}

TEST(ErrorNorm, SineErrorAtOneStepCountsBothTerms) {
  auto space = make_space(16);
  const FeField zero(space, FieldKind::velocity);
  const FeField s = interpolate(space, testing::sine_x());
  // max_m |e_m|^2 = 2 pi^2 and dt |grad e_1|^2 = 2 pi^2 with dt = 1
  const double e = error_norm(fields_only({zero, s}, 1.0), fields_only({zero, zero}, 1.0));
  EXPECT_NEAR(e, 4.0 * kPi * kPi, 2e-3 * 4.0 * kPi * kPi);
}

TEST(ErrorNorm, ReferenceSubsampledAtCoarseTimes) {
  auto space = make_space(4);
  const FeField zero(space, FieldKind::velocity);
  const FeField c = interpolate(space, testing::constant_field(1.0, 0.0));
  // fine iterates differ only between coarse times: no error is seen
  const Trajectory fine = fields_only({zero, c, zero, c, zero}, 0.25);
  const Trajectory coarse = fields_only({zero, zero, zero}, 0.5);
  EXPECT_EQ(error_norm(coarse, fine), 0.0);
}

TEST(ErrorNorm, IncompatibleGridsRejected) {
  auto space = make_space(4);
  const FeField z(space, FieldKind::velocity);
  EXPECT_THROW(error_norm(fields_only({z, z, z}, 0.5), fields_only({z, z, z, z}, 1.0 / 3)),
               std::invalid_argument);
  EXPECT_THROW(error_norm(fields_only({z, z}, 1.0), fields_only({z, z, z}, 0.25)), std::invalid_argument);
}

TEST(ErrorNorm, LiftIsExactForNestedSpaces) {
  auto coarse = make_space(4), fine = make_space(8);
  const FeField u = interpolate(coarse, testing::taylor_green(1.0));
  const FeField l = lift(u, fine);
  for (double x : {-3.0, -1.1, 0.2, 2.9})
    for (double y : {-2.5, 0.7, 3.1}) {
      const Vec2 a = u.evaluate({x, y}).value, b = l.evaluate({x, y}).value;
      EXPECT_NEAR((a - b).norm(), 0.0, 1e-13);
    }
  EXPECT_THROW(lift(u, make_space(6)), std::invalid_argument);
}

// ---------------------------------------------------------------- indicators

TEST(IndicatorTime, ZeroTrajectoryAccepted) {
  EXPECT_TRUE(indicator_time(stats_only({0.0, 0.0}, {}, 0.5), 1.0));
}

TEST(IndicatorTime, ThresholdAttainedIsAccepted) {
  const double dt = 0.125, eps = 0.7;
  const double threshold = -eps * std::log(dt);
  EXPECT_TRUE(indicator_time(stats_only({0.1, threshold}, {}, dt), eps));
  EXPECT_FALSE(indicator_time(stats_only({0.1, std::nextafter(threshold, 1e9)}, {}, dt), eps));
}

TEST(IndicatorTime, LargeEpsilonAcceptsBoundedData) {
  const Trajectory t = stats_only({1e3, 5e4, 2.0}, {}, 0.1);
  EXPECT_FALSE(indicator_time(t, 1.0));
  EXPECT_TRUE(indicator_time(t, 1e6));
}

TEST(IndicatorTime, StepOfOneRejected) {
  EXPECT_THROW(indicator_time(stats_only({0.0}, {}, 1.0), 1.0), std::invalid_argument);
}

TEST(IndicatorSpace, ZeroAcceptedAndBadWidthRejected) {
  const Trajectory z = stats_only({0.0, 0.0}, {0.0, 0.0}, 0.5);
  EXPECT_TRUE(indicator_space(z, z, 1.0, 0.3));
  EXPECT_THROW(indicator_space(z, z, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(indicator_space(z, stats_only({0.0}, {0.0}, 1.0), 1.0, 0.3), std::invalid_argument);
}

TEST(IndicatorSpace, MonotoneInEpsilon) {
  const Trajectory t = stats_only({0.4, 0.9, 0.6}, {0.3, 0.2, 0.25}, 0.25);
  bool seen = false;
  for (double eps = 0.05; eps < 10.0; eps *= 1.3) {
    const bool f = indicator_space(t, t, eps, 0.2);
    if (seen) EXPECT_TRUE(f);
    seen = seen || f;
  }
  EXPECT_TRUE(seen);
}

TEST(IndicatorSpace, GradientEntersWithFourthPower) {
  const double h = 0.25, g = 0.3;  // |grad u|^2 = g
  const double critical = g * g / -std::log(h);
  const Trajectory fe = stats_only({0.0}, {0.0}, 0.5);
  EXPECT_TRUE(indicator_space(stats_only({g}, {}, 0.5), fe, critical * 1.0001, h));
  EXPECT_FALSE(indicator_space(stats_only({g}, {}, 0.5), fe, critical * 0.9999, h));
  // u -> 2u multiplies |grad u|^2 by 4 and the contribution by 16
  EXPECT_TRUE(indicator_space(stats_only({4 * g}, {}, 0.5), fe, 16 * critical * 1.0001, h));
  EXPECT_FALSE(indicator_space(stats_only({4 * g}, {}, 0.5), fe, 16 * critical * 0.9999, h));
}

// ---------------------------------------------------------------- rates

TEST(FitRates, RecoversPowerLaws) {
  std::vector<std::pair<double, double>> one, two, flat;
  for (int l = 0; l < 5; ++l) {
    const double p = std::ldexp(1.0, -l);
    one.emplace_back(p, 3.0 * std::ldexp(1.0, -l));
    two.emplace_back(p, 3.0 * std::pow(4.0, -l));
    flat.emplace_back(p, 0.7);
  }
  const RateFit a = fit_rates(one), b = fit_rates(two), c = fit_rates(flat);
  EXPECT_NEAR(a.slope, 1.0, 1e-10);
  EXPECT_NEAR(a.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(a.intercept, std::log2(3.0), 1e-10);
  EXPECT_NEAR(b.slope, 2.0, 1e-10);
  EXPECT_NEAR(c.slope, 0.0, 1e-10);
  EXPECT_LT(a.max_residual, 1e-12);
}

TEST(FitRates, RejectsBadInput) {
  EXPECT_THROW(fit_rates({{0.5, 1.0}, {0.25, 0.5}}), std::invalid_argument);
  EXPECT_THROW(fit_rates({{0.5, 1.0}, {0.25, 0.0}, {0.125, 0.1}}), std::invalid_argument);
  EXPECT_THROW(fit_rates({{0.5, 1.0}, {0.25, -1.0}, {0.125, 0.1}}), std::invalid_argument);
}

// ---------------------------------------------------------------- config

TEST(Config, EchoRoundTrips) {
  ExperimentConfig c = tiny_stochastic();
  c.epsilon = 0.1 + 0.2;  // not representable in short decimal form
  c.noise.scale = 1.0 / 3.0;
  c.convection = ConvectionForm::paper_literal;
  c.scheme = SchemeKind::time_discrete;
  std::istringstream is(echo_config(c));
  const ExperimentConfig d = parse_config(is);
  EXPECT_EQ(echo_config(d), echo_config(c));
  EXPECT_EQ(d.epsilon, c.epsilon);
  EXPECT_EQ(d.noise.scale, c.noise.scale);
  EXPECT_EQ(d.levels, c.levels);
}

TEST(Config, ParsesCommentsAndRejectsUnknownKeys) {
  std::istringstream ok("# header\nlevels = 8x4, 16x8 # trailing\n\npaths=5\nnoise_mode = linear_mult\n");
  const ExperimentConfig c = parse_config(ok);
  ASSERT_EQ(c.levels.size(), 2u);
  EXPECT_EQ(c.levels[1], (Level{16, 8}));
  EXPECT_EQ(c.paths, 5);
  EXPECT_EQ(c.noise.mode, NoiseMode::linear_mult);
  std::istringstream bad("pathz = 3\n");
  EXPECT_THROW(parse_config(bad), std::invalid_argument);
  std::istringstream junk("paths = 3x\n");
  EXPECT_THROW(parse_config(junk), std::invalid_argument);
  EXPECT_THROW(parse_levels("32-16"), std::invalid_argument);
}

TEST(Config, ValidationRejectsUnnestedReference) {
  ExperimentConfig c = tiny_stochastic();
  c.reference = {4, 12};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.reference = {6, 16};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.reference = {4, 4};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, CouplingAndWidthWarnings) {
  ExperimentConfig c;
  c.levels = {{8, 2}, {64, 2}, {64, 64}};
  c.reference = {64, 128};
  c.final_time = 1.2;
  const auto w = c.validate();
  // n = 8 has h >= 1; 64x2 violates L dt <= (-eps log h)^-1; 64x64 satisfies it
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NE(w[0].find("h ="), std::string::npos);
  EXPECT_NE(w[1].find("exceeds"), std::string::npos);
}

// ---------------------------------------------------------------- experiment

TEST(Experiment, LevelEqualToReferenceHasZeroError) {
  ExperimentConfig c = tiny_stochastic();
  c.levels = {{4, 4}};
  c.reference = {4, 4};
  c.paths = 2;
  const ExperimentReport r = run_convergence_experiment(c);
  ASSERT_EQ(r.results.size(), 2u);
  for (const auto& p : r.results) {
    EXPECT_FALSE(p.failed) << p.failure;
    EXPECT_EQ(p.error, 0.0);
  }
  EXPECT_FALSE(r.rate_squared.valid);
}

TEST(Experiment, InvariantsAndOutputs) {
  const ExperimentConfig c = tiny_stochastic();
  const ExperimentReport r = run_convergence_experiment(c);
  EXPECT_EQ(r.failed_paths, 0);
  EXPECT_FALSE(r.aborted);
  ASSERT_EQ(r.levels.size(), 3u);
  for (const auto& l : r.levels) {
    EXPECT_LE(l.truncated_mean, l.plain_mean);
    EXPECT_GE(l.acceptance, 0.0);
    EXPECT_LE(l.acceptance, 1.0);
    for (std::size_t j = 1; j < l.acceptance_sweep.size(); ++j)
      EXPECT_LE(l.acceptance_sweep[j - 1], l.acceptance_sweep[j]);
    EXPECT_GT(l.plain_mean, 0.0);
    EXPECT_GT(l.mean_pressure_stoch, 0.0);
  }
  // errors shrink as dt is refined towards the reference
  EXPECT_GT(r.levels[0].plain_mean, r.levels[2].plain_mean);

  const auto dir = scratch("outputs");
  const auto files = emit_outputs(r, dir);
  EXPECT_EQ(files.size(), 7u);
  std::ifstream in(dir / "results.csv");
  int lines = 0;
  for (std::string s; std::getline(in, s);) ++lines;
  EXPECT_EQ(lines, 1 + 3 * c.paths);
}

TEST(Experiment, EmptyReportWritesHeadersOnly) {
  const auto dir = scratch("empty");
  ExperimentReport r;
  r.config.epsilon_sweep.clear();
  emit_outputs(r, dir);
  std::ifstream in(dir / "results.csv");
  int lines = 0;
  for (std::string s; std::getline(in, s);) ++lines;
  EXPECT_EQ(lines, 1);
}

TEST(Experiment, UnwritableDirectoryReported) {
  const auto blocker = scratch("blocker");
  std::ofstream(blocker) << "x";
  ExperimentReport r;
  try {
    emit_outputs(r, blocker / "sub");
    FAIL() << "expected an I/O error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos);
  }
}

TEST(Experiment, ReplayIsBitwiseAndThreadIndependent) {
  ExperimentConfig c = tiny_stochastic();
  const auto a = scratch("run_a"), b = scratch("run_b"), d = scratch("run_threads");
  emit_outputs(run_convergence_experiment(c), a);
  replay(a / "echo.cfg", b);
  EXPECT_TRUE(compare_outputs(a, b).empty());
  c.threads = 3;
  emit_outputs(run_convergence_experiment(c), d);
  EXPECT_TRUE(compare_outputs(a, d).empty());
}

TEST(Experiment, SeedChangesResults) {
  ExperimentConfig c = tiny_stochastic();
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  emit_outputs(run_convergence_experiment(c), a);
  c.seed += 1;
  emit_outputs(run_convergence_experiment(c), b);
  const auto diff = compare_outputs(a, b);
  EXPECT_NE(std::find(diff.begin(), diff.end(), "results.csv"), diff.end());
}

TEST(Experiment, FailedPathsCountedAndAbort) {
  ExperimentConfig c = tiny_stochastic();
  c.scheme = SchemeKind::time_discrete;
  c.noise.scale = 3.0;
  c.picard_max_iterations = 1;
  c.picard_tolerance = 1e-300;
  const ExperimentReport r = run_convergence_experiment(c);
  EXPECT_EQ(r.failed_paths, c.paths);
  EXPECT_TRUE(r.aborted);
  for (const auto& p : r.results) {
    EXPECT_TRUE(p.failed);
    EXPECT_FALSE(p.failure.empty());
  }
}

TEST(Experiment, DeterministicTaylorGreenFirstOrderInTime) {
  ExperimentConfig c;
  c.levels = {{32, 4}, {32, 8}, {32, 16}};
  c.reference_kind = ReferenceKind::taylor_green_exact;
  c.noise.scale = 0.0;
  c.paths = 1;
  c.final_time = 0.5;
  c.pressure_diagnostics = false;
  const ExperimentReport r = run_convergence_experiment(c);
  ASSERT_TRUE(r.rate_norm.valid) << r.rate_norm.reason;
  EXPECT_EQ(r.rate_parameter, "dt");
  EXPECT_NEAR(r.rate_norm.slope, 1.0, 0.2);
  EXPECT_EQ(r.levels[0].acceptance, 1.0);
}

}  // namespace
}  // namespace sns
