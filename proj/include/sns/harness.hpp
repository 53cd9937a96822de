#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sns/schemes.hpp"

namespace sns {

/// One discretization level: mesh subdivisions n and time steps M.
struct Level {
  int n = 8;
  int steps = 8;
  bool operator==(const Level&) const = default;
};

std::vector<Level> parse_levels(const std::string& text);  // "32x16,32x32"
std::string format_levels(const std::vector<Level>& levels);

/// What the level trajectories are compared against.
enum class ReferenceKind {
  trajectory,          // finest level on the same Brownian path
  taylor_green_exact,  // closed-form decay of the Taylor-Green vortex (no noise)
};

/// Which discretization parameter the rates are fitted against.
enum class RateParameter { automatic, dt, h };

struct ExperimentConfig {
  std::string study = "stochastic";
  std::vector<Level> levels{{32, 16}, {32, 32}, {32, 64}};
  Level reference{32, 512};
  ReferenceKind reference_kind = ReferenceKind::trajectory;
  RateParameter rate_parameter = RateParameter::automatic;
  int paths = 32;
  std::uint64_t seed = 20240601;
  double epsilon = 1.0;
  std::vector<double> epsilon_sweep{0.25, 0.5, 1.0, 2.0};
  double coupling = 1.0;  // L in L dt <= (-eps log h)^{-1}

  SchemeKind scheme = SchemeKind::fully_discrete;
  double viscosity = 1.0;
  double final_time = 1.0;
  ConvectionForm convection = ConvectionForm::skew;
  double picard_tolerance = 1e-10;
  int picard_max_iterations = 50;
  int velocity_degree = 2;
  int pressure_degree = 1;

  NoiseParameters noise{16, 2.0, 0.25, NoiseMode::additive};
  InitialCondition initial{InitialKind::taylor_green, 0.1, 4, 2.0, 1};

  bool pressure_diagnostics = true;
  int threads = 0;  // 0: hardware concurrency; never affects results
  std::string output_dir = "out";

  /// Throws on inconsistent settings; returns warnings for violated
  /// step-size couplings.
  std::vector<std::string> validate() const;
};

/// key = value text; '#' starts a comment. Unknown keys are rejected.
ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base = {});
void apply_config_entry(ExperimentConfig& config, const std::string& key, const std::string& value);
/// Full echo of every key, doubles printed round-trip exact.
std::string echo_config(const ExperimentConfig& config);

// ---------------------------------------------------------------- error and indicators

/// Iterate of a coarse trajectory lifted to a (nested) finer space by nodal
/// interpolation; exact for nested P2 spaces.
FeField lift(const FeField& coarse, const FeSpacePtr& fine);

/// max_m |e_m|^2 + dt sum_m |grad e_m|^2 over m = 1..M, with the reference
/// subsampled at the coarse times and norms taken in the reference space.
/// Operators of the reference space may be passed to skip reassembly.
double error_norm(const Trajectory& coarse, const Trajectory& reference,
                  const SpaceOperators* reference_ops = nullptr);

/// Same statistic against the exact Taylor-Green decay e^{-2 mu t} u0.
double error_norm_taylor_green(const Trajectory& coarse, double amplitude, double viscosity);

/// Every factor-th iterate (and its diagnostics) of a fine trajectory.
Trajectory subsample(const Trajectory& fine, int factor);

/// Diagnostics-only trajectory of the exact Taylor-Green decay.
Trajectory taylor_green_statistics(double amplitude, double viscosity, double dt, int steps);

/// max_m |grad u_m|^2 <= -eps log dt; rejects dt >= 1.
bool indicator_time(const Trajectory& traj, double epsilon);

/// max_m (|grad u_m|^4 + |u_{h,m}|^2) <= -eps log h; rejects h >= 1.
bool indicator_space(const Trajectory& traj_time, const Trajectory& traj_fe, double epsilon, double h);

// ---------------------------------------------------------------- rates

struct RateFit {
  bool valid = false;
  std::string reason;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double max_residual = 0.0;
  int points = 0;
};

/// Least-squares slope of log2(value) against log2(parameter).
RateFit fit_rates(const std::vector<std::pair<double, double>>& points);

// ---------------------------------------------------------------- experiment

struct PathResult {
  int level = 0;
  int path = 0;
  bool failed = false;
  std::string failure;
  double error = 0.0;
  bool flag_time = false;
  bool flag_space = false;
  std::vector<bool> flag_sweep;  // joint flag for each epsilon_sweep value
  EnergyReport energy;
  PressureNorms pressure;
};

struct LevelSummary {
  Level level;
  double h = 0.0;
  double dt = 0.0;
  int paths_used = 0;
  double truncated_mean = 0.0;
  double truncated_stderr = 0.0;
  double plain_mean = 0.0;
  double acceptance = 0.0;
  std::vector<double> acceptance_sweep;
  double mean_max_energy = 0.0;
  double mean_dissipation = 0.0;
  double mean_increment_h1 = 0.0;
  double mean_max_gradient = 0.0;
  double mean_pressure_det = 0.0;
  double mean_pressure_stoch = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::string> warnings;
  std::vector<PathResult> results;  // ordered by (level, path)
  std::vector<LevelSummary> levels;
  int failed_paths = 0;
  bool aborted = false;  // more than 10% of the paths failed
  std::string rate_parameter;  // "dt" or "h"
  RateFit rate_squared;        // truncated expectation of the squared error
  RateFit rate_norm;           // its square root
};

ExperimentReport run_convergence_experiment(const ExperimentConfig& config);

/// Writes results.csv, summary.csv, rates.csv, plot_*.dat and echo.cfg.
std::vector<std::filesystem::path> emit_outputs(const ExperimentReport& report,
                                                const std::filesystem::path& directory);

/// Re-run the experiment recorded in an echo file and emit it to directory.
ExperimentReport replay(const std::filesystem::path& echo_file, const std::filesystem::path& directory);

/// Names of emitted files whose bytes differ between two output directories.
std::vector<std::string> compare_outputs(const std::filesystem::path& a, const std::filesystem::path& b);

// ---------------------------------------------------------------- presets and studies

/// Noise-free Taylor-Green runs against the exact decay: mu = 1, T = 0.5;
/// temporal sweep on n = 64 with M in {8,16,32,64}, spatial sweep on
/// n in {8,16,32} with M = 256.
ExperimentConfig deterministic_preset(bool temporal);

/// Additive default noise, n = 32, M in {16,32,64} against M = 512, P = 32.
ExperimentConfig stochastic_preset();

struct ProjectionLevel {
  int n = 0;
  double h = 0.0;
  double velocity_l2 = 0.0;
  double velocity_h1 = 0.0;
  double pressure_l2 = 0.0;
};

struct ProjectionStudy {
  std::vector<ProjectionLevel> levels;
  RateFit velocity_l2, velocity_h1, pressure_l2;  // slopes in h of the error norms
};

/// Errors of Pi_h grad^perp(sin x sin y) and P_h cos x over the given meshes.
ProjectionStudy projection_rates(const std::vector<int>& meshes, int velocity_degree = 2,
                                 int pressure_degree = 1);

}  // namespace sns
