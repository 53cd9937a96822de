#include "sns/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sns/projection.hpp"

namespace sns {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Round-trip exact text for doubles, so echo files replay bitwise.
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw std::invalid_argument("config '" + key + "': expected a number, got '" + v + "'");
  return x;
}

long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw std::invalid_argument("config '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config '" + key + "': expected true or false, got '" + v + "'");
}

Level parse_level(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos)
    throw std::invalid_argument("level '" + text + "' must look like NxM, e.g. 32x64");
  Level l;
  l.n = static_cast<int>(parse_integer("level", trim(text.substr(0, x))));
  l.steps = static_cast<int>(parse_integer("level", trim(text.substr(x + 1))));
  return l;
}

std::string to_string(ReferenceKind k) {
  return k == ReferenceKind::trajectory ? "trajectory" : "taylor_green_exact";
}

std::string to_string(RateParameter p) {
  switch (p) {
    case RateParameter::dt: return "dt";
    case RateParameter::h: return "h";
    case RateParameter::automatic: break;
  }
  return "auto";
}

double mesh_width(int n) { return std::sqrt(2.0) * 2.0 * std::numbers::pi / n; }

double taylor_green_energy(double amplitude) {
  return 2.0 * std::numbers::pi * std::numbers::pi * amplitude * amplitude;
}

}  // namespace

std::vector<Level> parse_levels(const std::string& text) {
  std::vector<Level> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_level(item));
  if (out.empty()) throw std::invalid_argument("level schedule is empty");
  return out;
}

std::string format_levels(const std::vector<Level>& levels) {
  std::string s;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(levels[i].n) + "x" + std::to_string(levels[i].steps);
  }
  return s;
}

std::vector<std::string> ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("experiment config: " + msg); };
  if (levels.empty()) fail("no levels");
  if (paths < 1) fail("paths must be >= 1");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(coupling > 0.0)) fail("coupling must be positive");
  if (!(viscosity > 0.0) || !(final_time > 0.0)) fail("viscosity and final_time must be positive");
  for (double e : epsilon_sweep)
    if (!(e > 0.0)) fail("epsilon_sweep values must be positive");
  if (noise.scale < 0.0) fail("noise_scale must be nonnegative");
  if (noise.scale > 0.0 && noise.modes < 1) fail("noise_modes must be >= 1");
  for (const Level& l : levels)
    if (l.n < 2 || l.steps < 1) fail("level " + format_levels({l}) + " is degenerate");

  if (reference_kind == ReferenceKind::trajectory) {
    const Level& r = reference;
    for (const Level& l : levels) {
      const std::string name = format_levels({l});
      if (r.n < l.n || r.steps < l.steps)
        fail("reference " + format_levels({r}) + " is coarser than level " + name);
      if (r.n % l.n != 0 || r.steps % l.steps != 0)
        fail("reference " + format_levels({r}) + " is not nested with level " + name);
    }
  } else {
    if (initial.kind != InitialKind::taylor_green)
      fail("the exact Taylor-Green reference needs initial = taylor_green");
    if (noise.scale != 0.0) fail("the exact Taylor-Green reference needs noise_scale = 0");
  }

  std::vector<std::string> warnings;
  for (const Level& l : levels) {
    const double h = mesh_width(l.n);
    const double dt = final_time / l.steps;
    if (h >= 1.0) {
      warnings.push_back("level " + format_levels({l}) + ": h = " + num(h) +
                         " >= 1, the space indicator is not evaluated (treated as satisfied)");
      continue;
    }
    const double bound = 1.0 / (-epsilon * std::log(h));
    if (coupling * dt > bound)
      warnings.push_back("level " + format_levels({l}) + ": L dt = " + num(coupling * dt) +
                         " exceeds (-eps log h)^-1 = " + num(bound));
  }
  for (const Level& l : levels)
    if (final_time / l.steps >= 1.0)
      warnings.push_back("level " + format_levels({l}) +
                         ": dt >= 1, the time indicator threshold is nonpositive");
  return warnings;
}

void apply_config_entry(ExperimentConfig& c, const std::string& key, const std::string& v) {
  auto integer = [&] { return parse_integer(key, v); };
  auto real = [&] { return parse_double(key, v); };
  if (key == "study") c.study = v;
  else if (key == "levels") c.levels = parse_levels(v);
  else if (key == "reference") c.reference = parse_level(v);
  else if (key == "reference_kind") {
    if (v == "trajectory") c.reference_kind = ReferenceKind::trajectory;
    else if (v == "taylor_green_exact") c.reference_kind = ReferenceKind::taylor_green_exact;
    else throw std::invalid_argument("config 'reference_kind': expected trajectory or taylor_green_exact");
  } else if (key == "rate_parameter") {
    if (v == "auto") c.rate_parameter = RateParameter::automatic;
    else if (v == "dt") c.rate_parameter = RateParameter::dt;
    else if (v == "h") c.rate_parameter = RateParameter::h;
    else throw std::invalid_argument("config 'rate_parameter': expected auto, dt or h");
  } else if (key == "paths") c.paths = static_cast<int>(integer());
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer());
  else if (key == "epsilon") c.epsilon = real();
  else if (key == "epsilon_sweep") {
    c.epsilon_sweep.clear();
    for (const auto& e : split(v, ',')) c.epsilon_sweep.push_back(parse_double(key, e));
  } else if (key == "coupling") c.coupling = real();
  else if (key == "scheme") c.scheme = parse_scheme_kind(v);
  else if (key == "viscosity") c.viscosity = real();
  else if (key == "final_time") c.final_time = real();
  else if (key == "convection") c.convection = parse_convection_form(v);
  else if (key == "picard_tolerance") c.picard_tolerance = real();
  else if (key == "picard_max_iterations") c.picard_max_iterations = static_cast<int>(integer());
  else if (key == "velocity_degree") c.velocity_degree = static_cast<int>(integer());
  else if (key == "pressure_degree") c.pressure_degree = static_cast<int>(integer());
  else if (key == "noise_modes") c.noise.modes = static_cast<int>(integer());
  else if (key == "noise_decay") c.noise.decay = real();
  else if (key == "noise_scale") c.noise.scale = real();
  else if (key == "noise_mode") c.noise.mode = parse_noise_mode(v);
  else if (key == "initial") c.initial.kind = parse_initial_kind(v);
  else if (key == "initial_amplitude") c.initial.amplitude = real();
  else if (key == "initial_band") c.initial.band = static_cast<int>(integer());
  else if (key == "initial_slope") c.initial.spectrum_slope = real();
  else if (key == "initial_seed") c.initial.seed = static_cast<std::uint64_t>(integer());
  else if (key == "pressure_diagnostics") c.pressure_diagnostics = parse_bool(key, v);
  else if (key == "threads") c.threads = static_cast<int>(integer());
  else if (key == "output_dir") c.output_dir = v;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& is, ExperimentConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& file, ExperimentConfig base) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file " + file.string());
  return parse_config(in, std::move(base));
}

std::string echo_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  os << "# sns experiment echo; replay with: sns replay <this file>\n";
  kv("study", c.study);
  kv("levels", format_levels(c.levels));
  kv("reference", format_levels({c.reference}));
  kv("reference_kind", to_string(c.reference_kind));
  kv("rate_parameter", to_string(c.rate_parameter));
  kv("paths", std::to_string(c.paths));
  kv("seed", std::to_string(c.seed));
  kv("epsilon", num(c.epsilon));
  std::string sweep;
  for (std::size_t i = 0; i < c.epsilon_sweep.size(); ++i)
    sweep += (i ? "," : "") + num(c.epsilon_sweep[i]);
  kv("epsilon_sweep", sweep);
  kv("coupling", num(c.coupling));
  kv("scheme", to_string(c.scheme));
  kv("viscosity", num(c.viscosity));
  kv("final_time", num(c.final_time));
  kv("convection", to_string(c.convection));
  kv("picard_tolerance", num(c.picard_tolerance));
  kv("picard_max_iterations", std::to_string(c.picard_max_iterations));
  kv("velocity_degree", std::to_string(c.velocity_degree));
  kv("pressure_degree", std::to_string(c.pressure_degree));
  kv("noise_modes", std::to_string(c.noise.modes));
  kv("noise_decay", num(c.noise.decay));
  kv("noise_scale", num(c.noise.scale));
  kv("noise_mode", to_string(c.noise.mode));
  kv("initial", to_string(c.initial.kind));
  kv("initial_amplitude", num(c.initial.amplitude));
  kv("initial_band", std::to_string(c.initial.band));
  kv("initial_slope", num(c.initial.spectrum_slope));
  kv("initial_seed", std::to_string(c.initial.seed));
  kv("pressure_diagnostics", c.pressure_diagnostics ? "true" : "false");
  // Seed records: path p uses the Wiener keystream (seed, p).
  os << "# paths 0.." << c.paths - 1 << " keyed by (seed = " << c.seed << ", path id)\n";
  return os.str();
}

// ---------------------------------------------------------------- error and indicators

FeField lift(const FeField& coarse, const FeSpacePtr& fine) {
  const FeSpacePtr& cs = coarse.space();
  if (cs == fine) return coarse;
  if (fine->mesh().n() % cs->mesh().n() != 0)
    throw std::invalid_argument("lift: mesh " + std::to_string(cs->mesh().n()) +
                                " does not nest in mesh " + std::to_string(fine->mesh().n()));
  if (cs->signature() == fine->signature())
    return FeField(fine, coarse.kind(), coarse.coefficients());
  VectorFunction f{[&coarse](Point2 p) { return coarse.evaluate(p).value; }, {}};
  return interpolate(fine, f);
}

Trajectory subsample(const Trajectory& fine, int factor) {
  if (factor < 1 || fine.steps() % factor != 0)
    throw std::invalid_argument("subsample: factor " + std::to_string(factor) +
                                " does not divide " + std::to_string(fine.steps()) + " steps");
  Trajectory out;
  out.kind = fine.kind;
  out.dt = fine.dt * factor;
  const int steps = fine.steps() / factor;
  const bool fields = fine.velocity.size() == static_cast<std::size_t>(fine.steps()) + 1;
  if (fields) out.velocity.push_back(fine.velocity.front());
  for (int m = 1; m <= steps; ++m) {
    if (fields) out.velocity.push_back(fine.velocity[static_cast<std::size_t>(m * factor)]);
    if (fine.pressure.size() == static_cast<std::size_t>(fine.steps()))
      out.pressure.push_back(fine.pressure[static_cast<std::size_t>(m * factor - 1)]);
    StepDiagnostics d = fine.diagnostics[static_cast<std::size_t>(m * factor - 1)];
    if (fields) {
      // increments between retained iterates are not the fine ones; drop them
      d.increment_l2 = d.increment_grad = 0.0;
    }
    out.diagnostics.push_back(d);
  }
  return out;
}

double error_norm(const Trajectory& coarse, const Trajectory& reference,
                  const SpaceOperators* reference_ops) {
  const int m_c = coarse.steps(), m_r = reference.steps();
  if (m_c < 1 || m_r < m_c || m_r % m_c != 0)
    throw std::invalid_argument("error_norm: time grids with " + std::to_string(m_c) + " and " +
                                std::to_string(m_r) + " steps are incompatible");
  const int r = m_r / m_c;
  if (std::abs(reference.dt * r - coarse.dt) > 1e-12 * coarse.dt)
    throw std::invalid_argument("error_norm: step sizes disagree at the shared times");
  if (coarse.velocity.size() != static_cast<std::size_t>(m_c) + 1 ||
      reference.velocity.size() != static_cast<std::size_t>(m_r) + 1)
    throw std::invalid_argument("error_norm: trajectories must store their iterates");

  const FeSpacePtr& space = reference.velocity.front().space();
  std::shared_ptr<const SpaceOperators> owned;
  if (!reference_ops || reference_ops->space != space) {
    owned = make_operators(space);
    reference_ops = owned.get();
  }
  const SpaceOperators* ops = reference_ops;
  double max_l2 = 0.0, sum_grad = 0.0;
  for (int m = 1; m <= m_c; ++m) {
    const FeField u = lift(coarse.velocity[static_cast<std::size_t>(m)], space);
    const Eigen::VectorXd e =
        reference.velocity[static_cast<std::size_t>(m * r)].coefficients() - u.coefficients();
    max_l2 = std::max(max_l2, ops->l2_squared(e));
    sum_grad += ops->grad_squared(e);
  }
  return max_l2 + coarse.dt * sum_grad;
}

double error_norm_taylor_green(const Trajectory& coarse, double amplitude, double viscosity) {
  if (coarse.velocity.size() != static_cast<std::size_t>(coarse.steps()) + 1)
    throw std::invalid_argument("error_norm_taylor_green: trajectory must store its iterates");
  InitialCondition ic;
  ic.amplitude = amplitude;
  double max_l2 = 0.0, sum_grad = 0.0;
  for (int m = 1; m <= coarse.steps(); ++m) {
    ic.amplitude = amplitude * std::exp(-2.0 * viscosity * m * coarse.dt);
    const ErrorNorms e = velocity_error(coarse.velocity[static_cast<std::size_t>(m)], initial_velocity(ic));
    max_l2 = std::max(max_l2, e.l2 * e.l2);
    sum_grad += e.h1 * e.h1;
  }
  return max_l2 + coarse.dt * sum_grad;
}

Trajectory taylor_green_statistics(double amplitude, double viscosity, double dt, int steps) {
  Trajectory t;
  t.dt = dt;
  for (int m = 1; m <= steps; ++m) {
    StepDiagnostics d;
    d.energy = taylor_green_energy(amplitude) * std::exp(-4.0 * viscosity * m * dt);
    d.gradient = 2.0 * d.energy;
    t.diagnostics.push_back(d);
  }
  return t;
}

bool indicator_time(const Trajectory& traj, double epsilon) {
  if (!(traj.dt < 1.0) || !(traj.dt > 0.0))
    throw std::invalid_argument("indicator_time: needs 0 < dt < 1, got dt = " + num(traj.dt));
  double peak = 0.0;
  for (const auto& d : traj.diagnostics) peak = std::max(peak, d.gradient);
  return peak <= -epsilon * std::log(traj.dt);
}

bool indicator_space(const Trajectory& traj_time, const Trajectory& traj_fe, double epsilon, double h) {
  if (!(h < 1.0) || !(h > 0.0))
    throw std::invalid_argument("indicator_space: needs 0 < h < 1, got h = " + num(h));
  if (traj_time.steps() != traj_fe.steps())
    throw std::invalid_argument("indicator_space: trajectories have different step counts");
  double peak = 0.0;
  for (std::size_t m = 0; m < traj_fe.diagnostics.size(); ++m) {
    const double g = traj_time.diagnostics[m].gradient;
    peak = std::max(peak, g * g + traj_fe.diagnostics[m].energy);
  }
  return peak <= -epsilon * std::log(h);
}

// ---------------------------------------------------------------- rates

RateFit fit_rates(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3)
    throw std::invalid_argument("fit_rates: needs at least 3 levels, got " + std::to_string(points.size()));
  for (const auto& [p, v] : points)
    if (!(p > 0.0) || !(v > 0.0))
      throw std::invalid_argument("fit_rates: parameters and errors must be positive (got " + num(p) +
                                  ", " + num(v) + ")");
  const double n = static_cast<double>(points.size());
  double sx = 0, sy = 0;
  for (const auto& [p, v] : points) {
    sx += std::log2(p);
    sy += std::log2(v);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [p, v] : points) {
    const double dx = std::log2(p) - mx, dy = std::log2(v) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_rates: all parameters are equal");
  RateFit f;
  f.valid = true;
  f.points = static_cast<int>(points.size());
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (const auto& [p, v] : points) {
    const double r = std::log2(v) - (f.intercept + f.slope * std::log2(p));
    ss_res += r * r;
    f.max_residual = std::max(f.max_residual, std::abs(r));
  }
  f.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return f;
}

// ---------------------------------------------------------------- experiment

namespace {

struct Shared {
  const ExperimentConfig* config = nullptr;
  std::map<int, std::shared_ptr<const SpaceOperators>> ops;
  std::map<int, FeField> initial;
  std::shared_ptr<const NoiseModel> noise;       // null when noise_scale = 0
  std::shared_ptr<const NoiseModel> diagnostic;  // noise for the pressure monitor
  int modes = 1;
};

// Workspaces keep factorizations keyed by (n, M); one set per worker thread.
class WorkerState {
 public:
  explicit WorkerState(const Shared& s) : shared_(s) {}

  SchemeWorkspace& workspace(const Level& l) {
    auto key = std::make_pair(l.n, l.steps);
    auto it = ws_.find(key);
    if (it == ws_.end())
      it = ws_.emplace(key, std::make_unique<SchemeWorkspace>(shared_.ops.at(l.n))).first;
    return *it->second;
  }

 private:
  const Shared& shared_;
  std::map<std::pair<int, int>, std::unique_ptr<SchemeWorkspace>> ws_;
};

SchemeConfig scheme_config(const ExperimentConfig& c, const Shared& s, int steps) {
  SchemeConfig sc;
  sc.viscosity = c.viscosity;
  sc.final_time = c.final_time;
  sc.steps = steps;
  sc.convection = c.convection;
  sc.picard_tolerance = c.picard_tolerance;
  sc.picard_max_iterations = c.picard_max_iterations;
  sc.noise = s.noise;
  return sc;
}

Trajectory run_level(WorkerState& w, const Shared& s, const Level& l, const WienerPath& fine) {
  const ExperimentConfig& c = *s.config;
  SchemeWorkspace& ws = w.workspace(l);
  const SchemeConfig sc = scheme_config(c, s, l.steps);
  const FeField& u0 = s.initial.at(l.n);
  if (!s.noise) return run_deterministic(ws, u0, sc, c.scheme);
  return run_scheme(ws, u0, coarsen_path(fine, fine.steps / l.steps), sc, c.scheme);
}

void run_path(WorkerState& w, const Shared& s, int p, std::vector<PathResult>& out) {
  const ExperimentConfig& c = *s.config;
  const std::size_t nl = c.levels.size();
  auto slot = [&](std::size_t i) -> PathResult& { return out[i * static_cast<std::size_t>(c.paths) + p]; };
  for (std::size_t i = 0; i < nl; ++i) {
    slot(i).level = static_cast<int>(i);
    slot(i).path = p;
  }

  const bool exact = c.reference_kind == ReferenceKind::taylor_green_exact;
  const int fine_steps = exact ? 1 : c.reference.steps;
  WienerPath fine;
  Trajectory reference;
  try {
    if (s.noise) fine = sample_path(fine_steps, s.modes, c.final_time, c.seed, static_cast<std::uint64_t>(p));
    if (!exact) reference = run_level(w, s, c.reference, fine);
  } catch (const std::exception& e) {
    for (std::size_t i = 0; i < nl; ++i) {
      slot(i).failed = true;
      slot(i).failure = std::string("reference: ") + e.what();
    }
    return;
  }

  for (std::size_t i = 0; i < nl; ++i) {
    PathResult& r = slot(i);
    const Level& l = c.levels[i];
    try {
      const Trajectory traj = (!exact && l == c.reference) ? reference : run_level(w, s, l, fine);
      const Trajectory surrogate =
          exact ? taylor_green_statistics(c.initial.amplitude, c.viscosity, traj.dt, traj.steps())
                : subsample(reference, c.reference.steps / l.steps);
      r.error = exact ? error_norm_taylor_green(traj, c.initial.amplitude, c.viscosity)
                      : error_norm(traj, reference, s.ops.at(c.reference.n).get());
      const double h = mesh_width(l.n);
      auto flags = [&](double eps, bool& ft, bool& fs) {
        ft = traj.dt < 1.0 ? indicator_time(surrogate, eps) : false;
        fs = h < 1.0 ? indicator_space(surrogate, traj, eps, h) : true;
      };
      flags(c.epsilon, r.flag_time, r.flag_space);
      for (double eps : c.epsilon_sweep) {
        bool ft = false, fs = false;
        flags(eps, ft, fs);
        r.flag_sweep.push_back(ft && fs);
      }
      r.energy = energy_report(traj);
      if (c.pressure_diagnostics) r.pressure = trajectory_pressure_norms(traj, *s.diagnostic);
    } catch (const std::exception& e) {
      r.failed = true;
      r.failure = e.what();
    }
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ExperimentReport run_convergence_experiment(const ExperimentConfig& config) {
  ExperimentReport report;
  report.config = config;
  report.warnings = config.validate();

  Shared s;
  s.config = &config;
  std::set<int> meshes;
  for (const Level& l : config.levels) meshes.insert(l.n);
  if (config.reference_kind == ReferenceKind::trajectory) meshes.insert(config.reference.n);
  for (int n : meshes) {
    auto space = make_space(n, config.velocity_degree, config.pressure_degree);
    s.ops[n] = make_operators(space);
    s.initial.emplace(n, initial_state(space, config.initial));
  }
  NoiseParameters np = config.noise;
  s.modes = std::max(1, np.modes);
  if (np.scale > 0.0) s.noise = std::make_shared<const NoiseModel>(np);
  np.modes = s.modes;
  np.scale = 0.0;
  s.diagnostic = s.noise ? s.noise : std::make_shared<const NoiseModel>(np);

  const std::size_t nl = config.levels.size();
  const std::size_t np_ = static_cast<std::size_t>(config.paths);
  report.results.assign(nl * np_, PathResult{});

  // Paths are independent; each is run start to finish by one worker, so the
  // thread count never changes a result.
  std::atomic<int> next{0};
  auto worker = [&] {
    WorkerState w(s);
    for (int p = next++; p < config.paths; p = next++) run_path(w, s, p, report.results);
  };
  int threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, config.paths);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<bool> path_failed(np_, false);
  for (const auto& r : report.results)
    if (r.failed) path_failed[static_cast<std::size_t>(r.path)] = true;
  report.failed_paths = static_cast<int>(std::count(path_failed.begin(), path_failed.end(), true));
  report.aborted = report.failed_paths * 10 > config.paths;

  for (std::size_t i = 0; i < nl; ++i) {
    LevelSummary sum;
    sum.level = config.levels[i];
    sum.h = mesh_width(sum.level.n);
    sum.dt = config.final_time / sum.level.steps;
    std::vector<double> trunc, plain, accept, e_max, e_dis, e_inc, e_grad, p_det, p_sto;
    std::vector<std::vector<double>> sweep(config.epsilon_sweep.size());
    for (std::size_t p = 0; p < np_; ++p) {
      if (path_failed[p]) continue;
      const PathResult& r = report.results[i * np_ + p];
      const double flag = (r.flag_time && r.flag_space) ? 1.0 : 0.0;
      trunc.push_back(flag * r.error);
      plain.push_back(r.error);
      accept.push_back(flag);
      for (std::size_t j = 0; j < sweep.size(); ++j) sweep[j].push_back(r.flag_sweep[j] ? 1.0 : 0.0);
      e_max.push_back(r.energy.max_energy);
      e_dis.push_back(r.energy.dissipation);
      e_inc.push_back(r.energy.increment_h1);
      e_grad.push_back(r.energy.max_gradient);
      p_det.push_back(r.pressure.deterministic);
      p_sto.push_back(r.pressure.stochastic);
    }
    sum.paths_used = static_cast<int>(trunc.size());
    sum.truncated_mean = mean(trunc);
    if (trunc.size() > 1) {
      double ss = 0.0;
      for (double x : trunc) ss += (x - sum.truncated_mean) * (x - sum.truncated_mean);
      sum.truncated_stderr = std::sqrt(ss / static_cast<double>(trunc.size() - 1) / static_cast<double>(trunc.size()));
    }
    sum.plain_mean = mean(plain);
    sum.acceptance = mean(accept);
    for (const auto& v : sweep) sum.acceptance_sweep.push_back(mean(v));
    sum.mean_max_energy = mean(e_max);
    sum.mean_dissipation = mean(e_dis);
    sum.mean_increment_h1 = mean(e_inc);
    sum.mean_max_gradient = mean(e_grad);
    sum.mean_pressure_det = mean(p_det);
    sum.mean_pressure_stoch = mean(p_sto);
    report.levels.push_back(sum);
  }

  RateParameter rp = config.rate_parameter;
  if (rp == RateParameter::automatic) {
    bool same_n = true;
    for (const Level& l : config.levels) same_n = same_n && l.n == config.levels.front().n;
    rp = same_n ? RateParameter::dt : RateParameter::h;
  }
  report.rate_parameter = to_string(rp);
  std::vector<std::pair<double, double>> sq, nm;
  for (const auto& l : report.levels) {
    const double x = rp == RateParameter::dt ? l.dt : l.h;
    sq.emplace_back(x, l.truncated_mean);
    nm.emplace_back(x, std::sqrt(l.truncated_mean));
  }
  auto safe_fit = [](const std::vector<std::pair<double, double>>& pts) {
    try {
      return fit_rates(pts);
    } catch (const std::invalid_argument& e) {
      RateFit f;
      f.reason = e.what();
      return f;
    }
  };
  report.rate_squared = safe_fit(sq);
  report.rate_norm = safe_fit(nm);
  return report;
}

// ---------------------------------------------------------------- outputs

namespace {

std::string csv_text(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& text,
                std::vector<std::filesystem::path>& written) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw std::runtime_error("write failed for " + path.string());
  written.push_back(path);
}

std::string fit_row(const std::string& quantity, const std::string& param, const RateFit& f) {
  return quantity + "," + param + "," + (f.valid ? "1" : "0") + "," + num(f.slope) + "," + num(f.intercept) +
         "," + num(f.r_squared) + "," + num(f.max_residual) + "," + std::to_string(f.points) + "," +
         csv_text(f.reason) + "\n";
}

}  // namespace

std::vector<std::filesystem::path> emit_outputs(const ExperimentReport& report,
                                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  const ExperimentConfig& c = report.config;

  std::string eps_cols;
  for (double e : c.epsilon_sweep) eps_cols += ",accept_eps_" + num(e);

  std::string results =
      "level,n,steps,h,dt,path,failed,error,flag_time,flag_space,flag_joint" + eps_cols +
      ",max_energy,dissipation,increment_h1,max_gradient,pressure_det,pressure_stoch,failure\n";
  for (const PathResult& r : report.results) {
    const Level& l = c.levels[static_cast<std::size_t>(r.level)];
    results += std::to_string(r.level) + "," + std::to_string(l.n) + "," + std::to_string(l.steps) + "," +
               num(mesh_width(l.n)) + "," + num(c.final_time / l.steps) + "," + std::to_string(r.path) + "," +
               (r.failed ? "1" : "0") + "," + num(r.error) + "," + (r.flag_time ? "1" : "0") + "," +
               (r.flag_space ? "1" : "0") + "," + (r.flag_time && r.flag_space ? "1" : "0");
    for (std::size_t j = 0; j < c.epsilon_sweep.size(); ++j)
      results += std::string(",") + (j < r.flag_sweep.size() && r.flag_sweep[j] ? "1" : "0");
    results += "," + num(r.energy.max_energy) + "," + num(r.energy.dissipation) + "," +
               num(r.energy.increment_h1) + "," + num(r.energy.max_gradient) + "," +
               num(r.pressure.deterministic) + "," + num(r.pressure.stochastic) + "," + csv_text(r.failure) + "\n";
  }
  write_file(dir / "results.csv", results, written);

  std::string summary =
      "level,n,steps,h,dt,paths_used,truncated_mean,truncated_stderr,plain_mean,acceptance" + eps_cols +
      ",mean_max_energy,mean_dissipation,mean_increment_h1,mean_max_gradient,mean_pressure_det,"
      "mean_pressure_stoch\n";
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    const LevelSummary& s = report.levels[i];
    summary += std::to_string(i) + "," + std::to_string(s.level.n) + "," + std::to_string(s.level.steps) + "," +
               num(s.h) + "," + num(s.dt) + "," + std::to_string(s.paths_used) + "," + num(s.truncated_mean) +
               "," + num(s.truncated_stderr) + "," + num(s.plain_mean) + "," + num(s.acceptance);
    for (double a : s.acceptance_sweep) summary += "," + num(a);
    summary += "," + num(s.mean_max_energy) + "," + num(s.mean_dissipation) + "," +
               num(s.mean_increment_h1) + "," + num(s.mean_max_gradient) + "," + num(s.mean_pressure_det) +
               "," + num(s.mean_pressure_stoch) + "\n";
  }
  write_file(dir / "summary.csv", summary, written);

  std::string rates = "quantity,parameter,valid,slope,intercept,r_squared,max_log2_residual,points,reason\n";
  if (!report.rate_parameter.empty()) {
    rates += fit_row("truncated_error_squared", report.rate_parameter, report.rate_squared);
    rates += fit_row("truncated_error_norm", report.rate_parameter, report.rate_norm);
  }
  rates += "# failed_paths," + std::to_string(report.failed_paths) + ",aborted," +
           (report.aborted ? "1" : "0") + "\n";
  write_file(dir / "rates.csv", rates, written);

  const std::string param = report.rate_parameter.empty() ? "dt" : report.rate_parameter;
  std::string sq = "# log2(" + param + ") log2(truncated squared error vs reference)\n";
  std::string nm = "# log2(" + param + ") log2(sqrt truncated squared error vs reference)\n";
  for (const LevelSummary& s : report.levels) {
    if (!(s.truncated_mean > 0.0)) continue;
    const double x = std::log2(param == "h" ? s.h : s.dt);
    sq += num(x) + " " + num(std::log2(s.truncated_mean)) + "\n";
    nm += num(x) + " " + num(0.5 * std::log2(s.truncated_mean)) + "\n";
  }
  write_file(dir / "plot_error_squared.dat", sq, written);
  write_file(dir / "plot_error_norm.dat", nm, written);

  std::string acc = "# epsilon acceptance (first level)\n";
  if (!report.levels.empty())
    for (std::size_t j = 0; j < c.epsilon_sweep.size(); ++j)
      acc += num(c.epsilon_sweep[j]) + " " + num(report.levels.front().acceptance_sweep[j]) + "\n";
  write_file(dir / "plot_acceptance.dat", acc, written);

  write_file(dir / "echo.cfg", echo_config(c), written);
  return written;
}

ExperimentReport replay(const std::filesystem::path& echo_file, const std::filesystem::path& directory) {
  ExperimentConfig c = load_config(echo_file);
  c.output_dir = directory.string();
  ExperimentReport r = run_convergence_experiment(c);
  emit_outputs(r, directory);
  return r;
}

std::vector<std::string> compare_outputs(const std::filesystem::path& a, const std::filesystem::path& b) {
  static const char* kFiles[] = {"results.csv",           "summary.csv",         "rates.csv",
                                 "plot_error_squared.dat", "plot_error_norm.dat", "plot_acceptance.dat",
                                 "echo.cfg"};
  auto slurp = [](const std::filesystem::path& p, bool& ok) {
    std::ifstream in(p, std::ios::binary);
    ok = static_cast<bool>(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::vector<std::string> differ;
  for (const char* f : kFiles) {
    bool oka = false, okb = false;
    const std::string x = slurp(a / f, oka), y = slurp(b / f, okb);
    if (!oka || !okb || x != y) differ.emplace_back(f);
  }
  return differ;
}

// ---------------------------------------------------------------- presets and studies

ExperimentConfig deterministic_preset(bool temporal) {
  ExperimentConfig c;
  c.study = temporal ? "deterministic_time" : "deterministic_space";
  c.levels = temporal ? std::vector<Level>{{64, 8}, {64, 16}, {64, 32}, {64, 64}}
                      : std::vector<Level>{{8, 256}, {16, 256}, {32, 256}};
  c.reference = temporal ? Level{64, 64} : Level{32, 256};
  c.reference_kind = ReferenceKind::taylor_green_exact;
  c.rate_parameter = temporal ? RateParameter::dt : RateParameter::h;
  c.paths = 1;
  c.final_time = 0.5;
  c.noise.scale = 0.0;
  c.pressure_diagnostics = false;
  return c;
}

ExperimentConfig stochastic_preset() {
  ExperimentConfig c;
  c.study = "stochastic";
  return c;
}

ProjectionStudy projection_rates(const std::vector<int>& meshes, int velocity_degree, int pressure_degree) {
  InitialCondition tg;
  tg.amplitude = 1.0;
  const VectorFunction v = initial_velocity(tg);
  const ScalarFunction p{[](Point2 x) { return std::cos(x.x); },
                         [](Point2 x) { return Vec2(-std::sin(x.x), 0.0); }};
  ProjectionStudy study;
  std::vector<std::pair<double, double>> l2, h1, pl2;
  for (int n : meshes) {
    auto space = make_space(n, velocity_degree, pressure_degree);
    ProjectionLevel lv;
    lv.n = n;
    lv.h = mesh_width(n);
    const ErrorNorms ev = velocity_error(project_velocity(space, v), v);
    lv.velocity_l2 = ev.l2;
    lv.velocity_h1 = ev.h1;
    lv.pressure_l2 = pressure_error(project_pressure(space, p), p).l2;
    study.levels.push_back(lv);
    l2.emplace_back(lv.h, lv.velocity_l2);
    h1.emplace_back(lv.h, lv.velocity_h1);
    pl2.emplace_back(lv.h, lv.pressure_l2);
  }
  auto safe = [](const std::vector<std::pair<double, double>>& pts) {
    try {
      return fit_rates(pts);
    } catch (const std::invalid_argument& e) {
      RateFit f;
      f.reason = e.what();
      return f;
    }
  };
  study.velocity_l2 = safe(l2);
  study.velocity_h1 = safe(h1);
  study.pressure_l2 = safe(pl2);
  return study;
}

}  // namespace sns
