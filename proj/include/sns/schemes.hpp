#pragma once

#include <Eigen/SparseCholesky>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sns/assembly.hpp"
#include "sns/noise_model.hpp"
#include "sns/saddle_solver.hpp"
#include "sns/spectral_pressure.hpp"

namespace sns {

enum class SchemeKind {
  time_discrete,   // implicit convection (u_m . grad) u_m, Picard iteration
  fully_discrete,  // linearized convection with transport u_{m-1}
};

std::string to_string(SchemeKind kind);
SchemeKind parse_scheme_kind(const std::string& text);
std::string to_string(ConvectionForm form);
ConvectionForm parse_convection_form(const std::string& text);

struct SchemeConfig {
  double viscosity = 1.0;
  double final_time = 1.0;
  int steps = 1;
  ConvectionForm convection = ConvectionForm::skew;
  bool convection_enabled = true;
  double picard_tolerance = 1e-10;
  int picard_max_iterations = 50;
  std::shared_ptr<const NoiseModel> noise;  // null: no forcing

  double dt() const { return final_time / steps; }
  void validate() const;
};

/// Failure of a time step; records the step index (1-based) and the residual.
class SchemeError : public std::runtime_error {
 public:
  SchemeError(int step, const std::string& what, double residual)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step),
        residual_(residual) {}
  int step() const { return step_; }
  double residual() const { return residual_; }

 private:
  int step_;
  double residual_;
};

/// Read-only operators of one space; shareable across threads.
struct SpaceOperators {
  FeSpacePtr space;
  SparseMatrix mass;       // velocity
  SparseMatrix stiffness;  // velocity
  SparseMatrix divergence;
  Eigen::VectorXd pressure_mean;

  double l2_squared(const Eigen::VectorXd& v) const { return v.dot(mass * v); }
  double grad_squared(const Eigen::VectorXd& v) const { return v.dot(stiffness * v); }
};

std::shared_ptr<const SpaceOperators> make_operators(FeSpacePtr space);

/// Mutable per-trajectory state: the saddle factorization and, for the time
/// scheme, the norm used to bound the next Picard update.
class SchemeWorkspace {
 public:
  explicit SchemeWorkspace(std::shared_ptr<const SpaceOperators> ops);

  const SpaceOperators& operators() const { return *ops_; }
  const FeSpacePtr& space() const { return ops_->space; }
  SaddleSolver& solver() { return solver_; }

  /// Factorization of M + mu dt K, rebuilt when mu dt changes.
  const Eigen::SimplicialLDLT<SparseMatrix>& energy_norm(double mu_dt);

  /// Saddle factorization with velocity block M + mu dt K; preconditions the
  /// steps whose block adds the convection term.
  const SaddleSolver& stokes(double mu_dt);

  /// Noise load for the increments; additive families reuse per-mode loads.
  Eigen::VectorXd noise_load(const NoiseModel& noise, const FeField& u,
                             const Eigen::Ref<const Eigen::VectorXd>& increments);

 private:
  std::shared_ptr<const SpaceOperators> ops_;
  SaddleSolver solver_;
  SaddleSolver stokes_;
  double stokes_mu_dt_ = -1.0;
  Eigen::SimplicialLDLT<SparseMatrix> energy_;
  double energy_mu_dt_ = -1.0;
  const NoiseModel* cached_noise_ = nullptr;
  NoiseParameters cached_params_;
  std::vector<Eigen::VectorXd> mode_loads_;
};

struct StepResult {
  FeField velocity;
  FeField pressure;  // pi_m, zero mean
  int picard_iterations = 1;
  double picard_update = 0.0;  // bound on the H1 norm of the next Picard update
};

StepResult step_fully_discrete(SchemeWorkspace& ws, const FeField& u_prev,
                               const Eigen::Ref<const Eigen::VectorXd>& increments,
                               const SchemeConfig& config, int step_index = 1);

StepResult step_time_discrete(SchemeWorkspace& ws, const FeField& u_prev,
                              const Eigen::Ref<const Eigen::VectorXd>& increments,
                              const SchemeConfig& config, int step_index = 1);

struct StepDiagnostics {
  double energy = 0.0;          // |u_m|^2
  double gradient = 0.0;        // |grad u_m|^2
  double increment_l2 = 0.0;    // |u_m - u_{m-1}|^2
  double increment_grad = 0.0;  // |grad(u_m - u_{m-1})|^2
  double divergence = 0.0;      // max_q |int div(u_m) q|
  int picard_iterations = 0;
};

struct Trajectory {
  SchemeKind kind = SchemeKind::fully_discrete;
  double dt = 0.0;
  std::vector<FeField> velocity;  // u_0..u_M
  std::vector<FeField> pressure;  // pi_1..pi_M
  std::vector<StepDiagnostics> diagnostics;  // steps 1..M

  int steps() const { return static_cast<int>(diagnostics.size()); }
};

/// Advances u_0 through all increments of the path. The path's step count and
/// step size override config.steps and config.final_time / steps.
Trajectory run_scheme(SchemeWorkspace& ws, const FeField& u0, const WienerPath& path,
                      const SchemeConfig& config, SchemeKind kind);

/// Deterministic run (no increments) with config.steps steps.
Trajectory run_deterministic(SchemeWorkspace& ws, const FeField& u0, const SchemeConfig& config,
                             SchemeKind kind);

struct EnergyReport {
  double max_energy = 0.0;           // max_{m>=1} |u_m|^2
  double dissipation = 0.0;          // dt sum_{m>=1} |grad u_m|^2
  double increment_h1 = 0.0;        // sum_{m>=1} |u_m - u_{m-1}|^2_{W^{1,2}}
  double max_gradient = 0.0;         // max_{m>=1} |grad u_m|^2
};

EnergyReport energy_report(const Trajectory& traj);

/// Lemma-style pressure diagnostics of a trajectory on the transfer grid.
PressureNorms trajectory_pressure_norms(const Trajectory& traj, const NoiseModel& noise);

// ---------------------------------------------------------------- initial data

enum class InitialKind { taylor_green, random_band_limited, zero };

std::string to_string(InitialKind kind);
InitialKind parse_initial_kind(const std::string& text);

struct InitialCondition {
  InitialKind kind = InitialKind::taylor_green;
  double amplitude = 0.1;
  int band = 4;                 // random: wavevectors with |a|, |b| <= band
  double spectrum_slope = 2.0;  // random: coefficient decay |kappa|^{-slope}
  std::uint64_t seed = 1;
};

/// Divergence-free field before discretization (Leray projection applied in
/// closed form to the random field).
VectorFunction initial_velocity(const InitialCondition& ic);

/// Pi_h of the initial field on the space.
FeField initial_state(const FeSpacePtr& space, const InitialCondition& ic);

// ---------------------------------------------------------------- checkpoints

/// Text header (step, dt, space signature, length) followed by raw doubles.
void write_checkpoint(std::ostream& os, const FeField& u, int step, double dt);

struct Checkpoint {
  int step = 0;
  double dt = 0.0;
  std::string signature;
  Eigen::VectorXd coefficients;
};

Checkpoint read_checkpoint(std::istream& is);

}  // namespace sns
