// Command line front end: noise validation, projection rates and the
// Monte Carlo convergence experiments.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "sns/harness.hpp"
#include "sns/projection.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

// Flags shared by the experiment subcommands; unset flags leave the preset
// and config-file values alone.
struct Overrides {
  std::string config_file;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> paths;
  std::string levels;
  std::string reference;
  std::optional<double> epsilon;
  std::string convection;
  std::string scheme;
  std::optional<double> noise_scale;
  std::optional<double> noise_decay;
  std::optional<int> noise_modes;
  std::string noise_mode;
  std::optional<int> threads;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("-o,--out", o.out, "output directory");
  app->add_option("--seed", o.seed, "master seed of the Wiener paths");
  app->add_option("-P,--paths", o.paths, "number of Monte Carlo paths")->check(CLI::PositiveNumber);
  app->add_option("--levels", o.levels, "level schedule, e.g. 32x16,32x32,32x64");
  app->add_option("--reference", o.reference, "reference level, e.g. 32x512");
  app->add_option("--epsilon", o.epsilon, "indicator parameter")->check(CLI::PositiveNumber);
  app->add_option("--convection", o.convection, "paper_literal, skew or advective");
  app->add_option("--scheme", o.scheme, "txdiscr (linearized) or tdiscr (Picard)");
  app->add_option("--noise-scale", o.noise_scale, "noise amplitude (0 disables the noise)");
  app->add_option("--noise-decay", o.noise_decay, "mode decay exponent s");
  app->add_option("--noise-modes", o.noise_modes, "number of noise modes K");
  app->add_option("--noise-mode", o.noise_mode, "additive, linear_mult or bounded_mult");
  app->add_option("--threads", o.threads, "worker threads (0: all cores)");
}

sns::ExperimentConfig resolve(sns::ExperimentConfig c, const Overrides& o) {
  if (!o.config_file.empty()) c = sns::load_config(o.config_file, c);
  auto set = [&c](const std::string& key, const std::string& value) {
    if (!value.empty()) sns::apply_config_entry(c, key, value);
  };
  set("levels", o.levels);
  set("reference", o.reference);
  set("convection", o.convection);
  set("scheme", o.scheme);
  set("noise_mode", o.noise_mode);
  set("output_dir", o.out);
  if (o.seed) c.seed = *o.seed;
  if (o.paths) c.paths = *o.paths;
  if (o.epsilon) c.epsilon = *o.epsilon;
  if (o.noise_scale) c.noise.scale = *o.noise_scale;
  if (o.noise_decay) c.noise.decay = *o.noise_decay;
  if (o.noise_modes) c.noise.modes = *o.noise_modes;
  if (o.threads) c.threads = *o.threads;
  return c;
}

void print_report(const sns::ExperimentReport& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::printf("%-10s %12s %12s %14s %12s %12s %10s\n", "level", "h", "dt", "E[1 err]", "stderr",
              "E[err]", "accept");
  for (const auto& l : r.levels)
    std::printf("%4dx%-5d %12.5g %12.5g %14.6g %12.4g %12.6g %10.3f\n", l.level.n, l.level.steps, l.h, l.dt,
                l.truncated_mean, l.truncated_stderr, l.plain_mean, l.acceptance);
  auto fit = [&](const char* what, const sns::RateFit& f) {
    if (f.valid)
      std::printf("rate in %s of %s: slope %.4f (R^2 %.4f, %d levels)\n", r.rate_parameter.c_str(), what, f.slope,
                  f.r_squared, f.points);
    else
      std::printf("rate of %s not available: %s\n", what, f.reason.c_str());
  };
  fit("truncated squared error vs reference", r.rate_squared);
  fit("its square root", r.rate_norm);
  std::printf("failed paths: %d of %d%s\n", r.failed_paths, r.config.paths, r.aborted ? " (experiment failed)" : "");
}

int run_experiment(const sns::ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const sns::ExperimentReport r = sns::run_convergence_experiment(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_report(r);
  const auto files = sns::emit_outputs(r, c.output_dir);
  std::printf("wrote %zu files to %s (%.1f s)\n", files.size(), c.output_dir.c_str(), secs);
  return r.aborted ? kExitFailed : 0;
}

int validate_noise(const sns::ExperimentConfig& c, bool second_order, const std::string& out) {
  auto report_line = [](const char* label, const sns::NoiseConditionReport& r) {
    std::printf("%s: %s\n", label, r.passed ? "PASS" : "FAIL");
    for (std::size_t i = 0; i < r.names.size(); ++i)
      std::printf("  %-24s K:%12.6g  2K:%12.6g  4K:%12.6g  change %7.4f  increment ratio %7.4f\n",
                  r.names[i].c_str(), r.constants[i], r.constants_doubled[i], r.constants_quadrupled[i],
                  r.relative_change[i], r.increment_ratio[i]);
  };
  sns::NoiseParameters family = c.noise;
  if (family.scale <= 0.0) family.scale = 1.0;
  const sns::NoiseModel model(family);
  const auto main_report = sns::validate_conditions(model, second_order);
  sns::NoiseParameters control = family;
  control.decay = 1.0;
  const auto control_report = sns::validate_conditions(sns::NoiseModel(control), second_order);
  std::printf("noise family K=%d s=%g scale=%g mode=%s\n", family.modes, family.decay, family.scale,
              sns::to_string(family.mode).c_str());
  report_line("family", main_report);
  report_line("s = 1 control (expected to fail)", control_report);

  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "noise_validation.csv");
    if (!csv) throw std::runtime_error("cannot write " + (fs::path(out) / "noise_validation.csv").string());
    csv.precision(17);
    csv << "family,decay,quantity,c_K,c_2K,c_4K,relative_change,increment_ratio,passed\n";
    for (const auto* rep : {&main_report, &control_report}) {
      const double s = rep == &main_report ? family.decay : 1.0;
      for (std::size_t i = 0; i < rep->names.size(); ++i)
        csv << (rep == &main_report ? "family" : "control") << "," << s << "," << rep->names[i] << ","
            << rep->constants[i] << "," << rep->constants_doubled[i] << "," << rep->constants_quadrupled[i] << ","
            << rep->relative_change[i] << "," << rep->increment_ratio[i] << "," << rep->passed << "\n";
    }
  }
  return main_report.passed ? 0 : kExitFailed;
}

int project_rates(const std::vector<int>& meshes, bool infsup, const std::string& out) {
  const sns::ProjectionStudy s = sns::projection_rates(meshes);
  std::printf("%6s %12s %14s %14s %14s\n", "n", "h", "|u-Pu|_L2", "|u-Pu|_H1", "|p-Pp|_L2");
  for (const auto& l : s.levels)
    std::printf("%6d %12.5g %14.6g %14.6g %14.6g\n", l.n, l.h, l.velocity_l2, l.velocity_h1, l.pressure_l2);
  auto fit = [](const char* what, const sns::RateFit& f) {
    if (f.valid) std::printf("slope %-16s %.4f (R^2 %.5f)\n", what, f.slope, f.r_squared);
    else std::printf("slope %-16s n/a: %s\n", what, f.reason.c_str());
  };
  fit("velocity L2", s.velocity_l2);
  fit("velocity H1", s.velocity_h1);
  fit("pressure L2", s.pressure_l2);
  std::ofstream csv;
  if (!out.empty()) {
    fs::create_directories(out);
    csv.open(fs::path(out) / "projection_rates.csv");
    if (!csv) throw std::runtime_error("cannot write " + (fs::path(out) / "projection_rates.csv").string());
    csv.precision(17);
    csv << "n,h,velocity_l2,velocity_h1,pressure_l2\n";
    for (const auto& l : s.levels)
      csv << l.n << "," << l.h << "," << l.velocity_l2 << "," << l.velocity_h1 << "," << l.pressure_l2 << "\n";
  }
  if (infsup) {
    std::printf("%6s %16s %16s\n", "n", "beta P2/P1", "beta P1/P1");
    for (int n : meshes) {
      if (n > 16) continue;  // dense eigenproblem
      std::printf("%6d %16.6g %16.6g\n", n, sns::infsup_constant(sns::FeSpace(n, 2, 1)),
                  sns::infsup_constant(sns::FeSpace(n, 1, 1)));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic Navier-Stokes finite element convergence experiments"};
  app.require_subcommand(1);

  Overrides noise_o, det_o, sto_o;
  bool second_order = true;
  auto* vn = app.add_subcommand("validate-noise", "check the growth conditions of the noise family");
  add_common(vn, noise_o);
  vn->add_flag("--second-order,!--first-order", second_order, "also check the second derivative sums");

  std::vector<int> meshes{8, 16, 32, 64};
  bool infsup = false;
  std::string proj_out;
  auto* pr = app.add_subcommand("project-rates", "convergence of the Stokes and pressure projections");
  pr->add_option("-n,--meshes", meshes, "mesh subdivisions")->delimiter(',');
  pr->add_flag("--infsup", infsup, "also report discrete inf-sup constants (n <= 16)");
  pr->add_option("-o,--out", proj_out, "output directory");

  std::string direction = "time";
  auto* dr = app.add_subcommand("deterministic-rates", "noise-free Taylor-Green rates against the exact decay");
  add_common(dr, det_o);
  dr->add_option("--direction", direction, "time or space")->check(CLI::IsMember({"time", "space"}));

  auto* sr = app.add_subcommand("stochastic-rates", "Monte Carlo rate study on coupled Brownian paths");
  add_common(sr, sto_o);

  std::string echo_file, replay_out, compare_dir;
  auto* rp = app.add_subcommand("replay", "re-run an experiment from its echo file and compare outputs");
  rp->add_option("echo", echo_file, "echo.cfg written by a previous run")->required()->check(CLI::ExistingFile);
  rp->add_option("-o,--out", replay_out, "output directory (default: <echo dir>/replay)");
  rp->add_option("--compare", compare_dir, "directory to compare against (default: the echo file's directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*vn) {
      const auto c = resolve(sns::stochastic_preset(), noise_o);
      return validate_noise(c, second_order, noise_o.out);
    }
    if (*pr) return project_rates(meshes, infsup, proj_out);
    if (*dr) {
      auto c = sns::deterministic_preset(direction == "time");
      c.output_dir = "out/deterministic_" + direction;
      return run_experiment(resolve(c, det_o));
    }
    if (*sr) {
      auto c = sns::stochastic_preset();
      c.output_dir = "out/stochastic";
      return run_experiment(resolve(c, sto_o));
    }
    if (*rp) {
      const fs::path source = fs::path(echo_file).parent_path();
      const fs::path target = replay_out.empty() ? source / "replay" : fs::path(replay_out);
      const sns::ExperimentReport r = sns::replay(echo_file, target);
      print_report(r);
      const fs::path against = compare_dir.empty() ? source : fs::path(compare_dir);
      const auto differ = sns::compare_outputs(against, target);
      if (differ.empty()) {
        std::printf("replay identical to %s\n", against.string().c_str());
        return 0;
      }
      for (const auto& f : differ) std::printf("replay differs: %s\n", f.c_str());
      return kExitFailed;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return 0;
}
