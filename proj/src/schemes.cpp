#include "sns/schemes.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "sns/projection.hpp"

namespace sns {

std::string to_string(SchemeKind kind) {
  return kind == SchemeKind::time_discrete ? "tdiscr" : "txdiscr";
}

SchemeKind parse_scheme_kind(const std::string& text) {
  if (text == "tdiscr") return SchemeKind::time_discrete;
  if (text == "txdiscr") return SchemeKind::fully_discrete;
  throw std::invalid_argument("unknown scheme '" + text + "' (expected tdiscr or txdiscr)");
}

std::string to_string(ConvectionForm form) {
  switch (form) {
    case ConvectionForm::paper_literal: return "paper_literal";
    case ConvectionForm::skew: return "skew";
    case ConvectionForm::advective: return "advective";
  }
  return "skew";
}

ConvectionForm parse_convection_form(const std::string& text) {
  if (text == "paper_literal") return ConvectionForm::paper_literal;
  if (text == "skew") return ConvectionForm::skew;
  if (text == "advective") return ConvectionForm::advective;
  throw std::invalid_argument("unknown convection form '" + text +
                              "' (expected paper_literal, skew or advective)");
}

void SchemeConfig::validate() const {
  if (!(viscosity > 0.0)) throw std::invalid_argument("SchemeConfig: viscosity must be positive");
  if (!(final_time > 0.0)) throw std::invalid_argument("SchemeConfig: final time must be positive");
  if (steps < 1) throw std::invalid_argument("SchemeConfig: step count must be >= 1");
  if (!(picard_tolerance > 0.0) || picard_max_iterations < 1)
    throw std::invalid_argument("SchemeConfig: invalid Picard settings");
}

std::shared_ptr<const SpaceOperators> make_operators(FeSpacePtr space) {
  auto ops = std::make_shared<SpaceOperators>();
  ops->mass = assemble_mass(*space, FieldKind::velocity).matrix;
  ops->stiffness = assemble_stiffness(*space).matrix;
  ops->divergence = assemble_divergence(*space).matrix;
  ops->pressure_mean = pressure_mean_functional(*space);
  ops->space = std::move(space);
  return ops;
}

SchemeWorkspace::SchemeWorkspace(std::shared_ptr<const SpaceOperators> ops)
    : ops_(std::move(ops)),
      solver_(ops_->divergence, ops_->pressure_mean),
      stokes_(ops_->divergence, ops_->pressure_mean) {}

const SaddleSolver& SchemeWorkspace::stokes(double mu_dt) {
  if (mu_dt != stokes_mu_dt_) {
    stokes_.factorize(SparseMatrix(ops_->mass + mu_dt * ops_->stiffness));
    stokes_mu_dt_ = mu_dt;
  }
  return stokes_;
}

Eigen::VectorXd SchemeWorkspace::noise_load(const NoiseModel& noise, const FeField& u,
                                            const Eigen::Ref<const Eigen::VectorXd>& increments) {
  if (noise.multiplicative()) return apply_noise(noise, u, increments);
  const NoiseParameters& p = noise.parameters();
  if (cached_noise_ != &noise || cached_params_.modes != p.modes || cached_params_.decay != p.decay ||
      cached_params_.scale != p.scale || cached_params_.mode != p.mode) {
    mode_loads_.clear();
    for (int k = 0; k < noise.modes(); ++k)
      mode_loads_.push_back(apply_noise(noise, u, Eigen::VectorXd::Unit(noise.modes(), k)));
    cached_noise_ = &noise;
    cached_params_ = p;
  }
  Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ops_->space->velocity_size()));
  for (int k = 0; k < noise.modes(); ++k) load += increments[k] * mode_loads_[static_cast<std::size_t>(k)];
  return load;
}

const Eigen::SimplicialLDLT<SparseMatrix>& SchemeWorkspace::energy_norm(double mu_dt) {
  if (mu_dt != energy_mu_dt_) {
    energy_.compute(SparseMatrix(ops_->mass + mu_dt * ops_->stiffness));
    energy_mu_dt_ = mu_dt;
  }
  return energy_;
}

namespace {

SparseMatrix convection(const SpaceOperators& ops, const FeField& transport, const SchemeConfig& c) {
  return component_block_diagonal(assemble_convection_block(*ops.space, transport, c.convection));
}

Eigen::VectorXd forcing(SchemeWorkspace& ws, const FeField& u_prev,
                        const Eigen::Ref<const Eigen::VectorXd>& increments, const SchemeConfig& c) {
  Eigen::VectorXd f = ws.operators().mass * u_prev.coefficients();
  if (c.noise && increments.size() > 0 && increments.cwiseAbs().maxCoeff() > 0.0)
    f += ws.noise_load(*c.noise, u_prev, increments);
  return f;
}

// The step matrix differs from M + mu dt K by dt C; GMRES preconditioned with
// the Stokes factorization converges in a few iterations for moderate dt |u|.
SaddleSolution solve_step(SchemeWorkspace& ws, const SparseMatrix& a, const Eigen::VectorXd& f,
                          double mu_dt, int step) {
  try {
    const SaddleSolver& stokes = ws.stokes(mu_dt);
    ws.solver().set_velocity_block(a);
    return ws.solver().solve_preconditioned(stokes, f, Eigen::VectorXd::Zero(ws.solver().pressure_size()));
  } catch (const SolverError& e) {
    throw SchemeError(step, e.what(), e.residual());
  }
}

StepResult finish(const FeSpacePtr& space, SaddleSolution sol, double dt) {
  StepResult r;
  r.velocity = FeField(space, FieldKind::velocity, std::move(sol.velocity));
  // B^T p carries -dt pi in the scheme's momentum equation.
  r.pressure = FeField(space, FieldKind::pressure, Eigen::VectorXd(-sol.pressure / dt));
  return r;
}

void check_state(const SchemeWorkspace& ws, const FeField& u_prev) {
  if (u_prev.kind() != FieldKind::velocity || u_prev.space() != ws.space())
    throw std::invalid_argument("scheme step: state must be a velocity on the workspace space");
}

}  // namespace

StepResult step_fully_discrete(SchemeWorkspace& ws, const FeField& u_prev,
                               const Eigen::Ref<const Eigen::VectorXd>& increments,
                               const SchemeConfig& config, int step_index) {
  check_state(ws, u_prev);
  const SpaceOperators& ops = ws.operators();
  const double dt = config.dt();
  SparseMatrix a = ops.mass + (config.viscosity * dt) * ops.stiffness;
  if (config.convection_enabled) a += dt * convection(ops, u_prev, config);
  const Eigen::VectorXd f = forcing(ws, u_prev, increments, config);
  return finish(ws.space(), solve_step(ws, a, f, config.viscosity * dt, step_index), dt);
}

StepResult step_time_discrete(SchemeWorkspace& ws, const FeField& u_prev,
                              const Eigen::Ref<const Eigen::VectorXd>& increments,
                              const SchemeConfig& config, int step_index) {
  check_state(ws, u_prev);
  const SpaceOperators& ops = ws.operators();
  const double dt = config.dt();
  const double mu_dt = config.viscosity * dt;
  const SparseMatrix base = ops.mass + mu_dt * ops.stiffness;
  const Eigen::VectorXd f = forcing(ws, u_prev, increments, config);
  if (!config.convection_enabled) {
    StepResult r = finish(ws.space(), solve_step(ws, base, f, mu_dt, step_index), dt);
    r.picard_iterations = 1;
    return r;
  }

  // Picard: sweep j freezes the transport at w_{j-1} (w_0 = u_{m-1}). The
  // defect of w_j in the nonlinear system is r = dt (C(w_j) - C(w_{j-1})) w_j and
  // the next update obeys |delta|_E <= |r|_{E^-1} with E = M + mu dt K, hence
  // |delta|_{H1} <= |r|_{E^-1} / sqrt(min(1, mu dt)).
  const auto& energy = ws.energy_norm(mu_dt);
  const double coercivity = std::sqrt(std::min(1.0, mu_dt));
  FeField transport = u_prev;
  SparseMatrix c_prev = convection(ops, transport, config);
  double bound = 0.0;
  for (int sweep = 1; sweep <= config.picard_max_iterations; ++sweep) {
    SaddleSolution sol = solve_step(ws, SparseMatrix(base + dt * c_prev), f, mu_dt, step_index);
    FeField w(ws.space(), FieldKind::velocity, sol.velocity);
    SparseMatrix c_next = convection(ops, w, config);
    const Eigen::VectorXd defect = dt * (c_next - c_prev) * w.coefficients();
    bound = std::sqrt(std::max(0.0, defect.dot(energy.solve(defect)))) / coercivity;
    const double size = std::sqrt(ops.l2_squared(w.coefficients()) + ops.grad_squared(w.coefficients()));
    if (bound <= config.picard_tolerance * std::max(1.0, size)) {
      StepResult r = finish(ws.space(), std::move(sol), dt);
      r.picard_iterations = sweep;
      r.picard_update = bound;
      return r;
    }
    transport = std::move(w);
    c_prev = std::move(c_next);
  }
  throw SchemeError(step_index,
                    "Picard iteration did not converge in " +
                        std::to_string(config.picard_max_iterations) + " sweeps",
                    bound);
}

Trajectory run_scheme(SchemeWorkspace& ws, const FeField& u0, const WienerPath& path,
                      const SchemeConfig& config, SchemeKind kind) {
  SchemeConfig c = config;
  c.steps = path.steps;
  c.final_time = path.dt * path.steps;
  c.validate();
  if (c.noise && path.modes() < c.noise->modes())
    throw std::invalid_argument("run_scheme: path has fewer Wiener components than noise modes");
  check_state(ws, u0);

  Trajectory traj;
  traj.kind = kind;
  traj.dt = c.dt();
  traj.velocity.reserve(static_cast<std::size_t>(c.steps) + 1);
  traj.velocity.push_back(u0);
  const SpaceOperators& ops = ws.operators();
  for (int m = 1; m <= c.steps; ++m) {
    const FeField& prev = traj.velocity.back();
    // Step m sees increments 1..m only.
    const Eigen::VectorXd dw = path.increments.row(m - 1).transpose();
    StepResult r = kind == SchemeKind::fully_discrete ? step_fully_discrete(ws, prev, dw, c, m)
                                                      : step_time_discrete(ws, prev, dw, c, m);
    StepDiagnostics d;
    const Eigen::VectorXd& u = r.velocity.coefficients();
    const Eigen::VectorXd du = u - prev.coefficients();
    d.energy = ops.l2_squared(u);
    d.gradient = ops.grad_squared(u);
    d.increment_l2 = ops.l2_squared(du);
    d.increment_grad = ops.grad_squared(du);
    d.divergence = discrete_divergence(ops.divergence, r.velocity);
    d.picard_iterations = r.picard_iterations;
    traj.diagnostics.push_back(d);
    traj.velocity.push_back(std::move(r.velocity));
    traj.pressure.push_back(std::move(r.pressure));
  }
  return traj;
}

Trajectory run_deterministic(SchemeWorkspace& ws, const FeField& u0, const SchemeConfig& config,
                             SchemeKind kind) {
  WienerPath path;
  path.steps = config.steps;
  path.dt = config.dt();
  path.increments = Eigen::MatrixXd::Zero(config.steps, config.noise ? config.noise->modes() : 0);
  return run_scheme(ws, u0, path, config, kind);
}

EnergyReport energy_report(const Trajectory& traj) {
  EnergyReport r;
  for (const StepDiagnostics& d : traj.diagnostics) {
    r.max_energy = std::max(r.max_energy, d.energy);
    r.max_gradient = std::max(r.max_gradient, d.gradient);
    r.dissipation += traj.dt * d.gradient;
    r.increment_h1 += d.increment_l2 + d.increment_grad;
  }
  return r;
}

PressureNorms trajectory_pressure_norms(const Trajectory& traj, const NoiseModel& noise) {
  if (traj.velocity.empty()) return {};
  const SpectralGrid grid(transfer_resolution(traj.velocity.front().space()->mesh().n()));
  return monitor_pressure_norms(traj.velocity, traj.dt, noise, grid);
}

// ---------------------------------------------------------------- initial data

std::string to_string(InitialKind kind) {
  switch (kind) {
    case InitialKind::taylor_green: return "taylor_green";
    case InitialKind::random_band_limited: return "random";
    case InitialKind::zero: return "zero";
  }
  return "zero";
}

InitialKind parse_initial_kind(const std::string& text) {
  if (text == "taylor_green") return InitialKind::taylor_green;
  if (text == "random") return InitialKind::random_band_limited;
  if (text == "zero") return InitialKind::zero;
  throw std::invalid_argument("unknown initial condition '" + text +
                              "' (expected taylor_green, random or zero)");
}

VectorFunction initial_velocity(const InitialCondition& ic) {
  const double amp = ic.amplitude;
  switch (ic.kind) {
    case InitialKind::zero:
      return {[](Point2) { return Vec2(Vec2::Zero()); }, [](Point2) { return Mat2(Mat2::Zero()); }};
    case InitialKind::taylor_green:
      // grad^perp of sin x sin y
      return {[amp](Point2 p) {
                return Vec2(-amp * std::sin(p.x) * std::cos(p.y), amp * std::cos(p.x) * std::sin(p.y));
              },
              [amp](Point2 p) {
                Mat2 g;
                g << -std::cos(p.x) * std::cos(p.y), std::sin(p.x) * std::sin(p.y),
                    -std::sin(p.x) * std::sin(p.y), std::cos(p.x) * std::cos(p.y);
                return Mat2(amp * g);
              }};
    case InitialKind::random_band_limited: break;
  }

  struct Mode {
    Vec2 kappa;
    Vec2 cos_coef;
    Vec2 sin_coef;
  };
  auto modes = std::make_shared<std::vector<Mode>>();
  std::uint32_t index = 0;
  double energy = 0.0;
  for (int a = 0; a <= ic.band; ++a)
    for (int b = -ic.band; b <= ic.band; ++b) {
      if (a == 0 && b <= 0) continue;
      const Vec2 kappa(a, b);
      const double weight = std::pow(kappa.norm(), -ic.spectrum_slope);
      Vec2 cc, sc;
      for (int c = 0; c < 2; ++c) {
        cc[c] = weight * keyed_normal(ic.seed, ~0ULL, index, static_cast<std::uint32_t>(c));
        sc[c] = weight * keyed_normal(ic.seed, ~0ULL, index, static_cast<std::uint32_t>(2 + c));
      }
      ++index;
      // Leray projection mode by mode: drop the component along kappa.
      const Vec2 khat = kappa.normalized();
      cc -= cc.dot(khat) * khat;
      sc -= sc.dot(khat) * khat;
      energy += 2.0 * kPi * kPi * (cc.squaredNorm() + sc.squaredNorm());
      modes->push_back({kappa, cc, sc});
    }
  // scale so that the root-mean-square velocity equals the amplitude
  const double factor = energy > 0.0 ? amp / std::sqrt(energy / (4.0 * kPi * kPi)) : 0.0;
  for (Mode& m : *modes) {
    m.cos_coef *= factor;
    m.sin_coef *= factor;
  }
  return {[modes](Point2 p) {
            Vec2 v = Vec2::Zero();
            for (const Mode& m : *modes) {
              const double t = m.kappa[0] * p.x + m.kappa[1] * p.y;
              v += std::cos(t) * m.cos_coef + std::sin(t) * m.sin_coef;
            }
            return v;
          },
          [modes](Point2 p) {
            Mat2 g = Mat2::Zero();
            for (const Mode& m : *modes) {
              const double t = m.kappa[0] * p.x + m.kappa[1] * p.y;
              g += (-std::sin(t) * m.cos_coef + std::cos(t) * m.sin_coef) * m.kappa.transpose();
            }
            return g;
          }};
}

FeField initial_state(const FeSpacePtr& space, const InitialCondition& ic) {
  if (ic.kind == InitialKind::zero) return FeField(space, FieldKind::velocity);
  return project_velocity(space, initial_velocity(ic));
}

// ---------------------------------------------------------------- checkpoints

void write_checkpoint(std::ostream& os, const FeField& u, int step, double dt) {
  std::ostringstream header;
  header.precision(17);
  header << "sns-checkpoint 1\nstep " << step << "\ndt " << dt << "\nspace "
         << u.space()->signature() << "\nkind " << (u.kind() == FieldKind::velocity ? "velocity" : "pressure")
         << "\nlength " << u.coefficients().size() << "\n";
  os << header.str();
  os.write(reinterpret_cast<const char*>(u.coefficients().data()),
           static_cast<std::streamsize>(u.coefficients().size() * sizeof(double)));
  if (!os) throw std::runtime_error("write_checkpoint: stream error");
}

Checkpoint read_checkpoint(std::istream& is) {
  auto expect = [&is](const std::string& key) {
    std::string k;
    if (!(is >> k) || k != key) throw std::runtime_error("read_checkpoint: expected '" + key + "'");
  };
  Checkpoint c;
  std::string version, kind;
  expect("sns-checkpoint");
  is >> version;
  expect("step");
  is >> c.step;
  expect("dt");
  is >> c.dt;
  expect("space");
  is >> c.signature;
  expect("kind");
  is >> kind;
  expect("length");
  Eigen::Index n = 0;
  is >> n;
  is.get();  // newline before the payload
  if (!is || n < 0) throw std::runtime_error("read_checkpoint: malformed header");
  c.coefficients.resize(n);
  is.read(reinterpret_cast<char*>(c.coefficients.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("read_checkpoint: truncated payload");
  return c;
}

}  // namespace sns
