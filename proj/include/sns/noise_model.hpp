#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "sns/fe_space.hpp"

namespace sns {

/// How the noise coefficient depends on the velocity value xi = u(x).
///   additive:       psi(xi) = 1
///   linear_mult:    psi(xi) = xi_c   (component c of the mode)
///   nonlinear_mult: psi(xi) = sqrt(1 + |xi|^2)
enum class NoiseMode { additive, linear_mult, nonlinear_mult };

std::string to_string(NoiseMode mode);
NoiseMode parse_noise_mode(const std::string& text);

struct NoiseParameters {
  int modes = 16;  // K
  double decay = 2.0;  // s
  double scale = 0.2;
  NoiseMode mode = NoiseMode::additive;
};

/// Value and derivatives of one mode g_k at (x, xi). Second-order entries are
/// squared Frobenius norms of the corresponding derivative tensors.
struct ModeJet {
  Vec2 value = Vec2::Zero();
  Mat2 dx = Mat2::Zero();   // dx(c, d) = d g_c / d x_d
  Mat2 dxi = Mat2::Zero();  // dxi(c, d) = d g_c / d xi_d
  double dxx_sq = 0.0;
  double dxixi_sq = 0.0;
  double dxdxi_sq = 0.0;
};

/// Truncated family g_k(x, xi) = scale k^{-s} rho_l(x) psi(xi) e_c, with
/// l = (k+1)/2, c = (k-1) mod 2 and rho_l the real trigonometric basis ordered by
/// wavenumber: cos x, sin x, cos y, sin y, cos(x+y), ...
class NoiseModel {
 public:
  /// Accepts any positive decay; see make_default_family for the checked path.
  explicit NoiseModel(NoiseParameters params);

  const NoiseParameters& parameters() const { return params_; }
  int modes() const { return params_.modes; }
  bool multiplicative() const { return params_.mode != NoiseMode::additive; }

  /// k is 1-based, 1 <= k <= modes().
  Vec2 value(int k, Point2 x, const Vec2& xi) const;
  ModeJet jet(int k, Point2 x, const Vec2& xi, bool second_order) const;

  /// Same family with a different truncation.
  NoiseModel with_modes(int modes) const;

  /// Wavevector (a, b) and phase (0 = cos, 1 = sin) of rho_l.
  struct Wave {
    int a = 0, b = 0, phase = 0;
  };
  const Wave& wave(int l) const { return waves_[static_cast<std::size_t>(l - 1)]; }

 private:
  NoiseParameters params_;
  std::vector<Wave> waves_;
};

/// The default family; rejects s < 2.
NoiseModel make_default_family(double decay, double scale, NoiseMode mode, int modes = 16);

struct NoiseConditionReport {
  int modes = 0;
  // sup over the sample grid of the normalized sums at K and at 2K
  std::vector<std::string> names;
  std::vector<double> constants;
  std::vector<double> constants_doubled;
  std::vector<double> constants_quadrupled;
  std::vector<double> relative_change;  // K -> 2K
  std::vector<double> increment_ratio;  // (c_4K - c_2K) / (c_2K - c_K)
  bool passed = false;
};

/// Numeric check of the growth conditions on g_k. A sum passes when its
/// supremum is finite, changes by at most 5% from K to 2K, and its increments
/// shrink (ratio below 0.75) from K -> 2K to 2K -> 4K; slowly diverging sums
/// fail the last test even when a single doubling looks small.
NoiseConditionReport validate_conditions(const NoiseModel& model, bool include_second_order);

/// Brownian increments for one path: increments(m, k) ~ N(0, dt).
struct WienerPath {
  int steps = 0;
  double dt = 0.0;
  Eigen::MatrixXd increments;  // steps x modes
  std::uint64_t master_seed = 0;
  std::uint64_t path_id = 0;
  int coarsening = 1;  // fine increments summed into each row

  int modes() const { return static_cast<int>(increments.cols()); }
  double final_time() const { return dt * steps; }
};

/// Standard normal keyed by (seed, path, k, m); identical for every caller.
double keyed_normal(std::uint64_t seed, std::uint64_t path, std::uint32_t k, std::uint32_t m);

WienerPath sample_path(int steps, int modes, double final_time, std::uint64_t master_seed,
                       std::uint64_t path_id);

/// Sum r consecutive increments; rejects r not dividing the step count.
WienerPath coarsen_path(const WienerPath& path, int factor);

/// Load functional  F[w] = int sum_k g_k(x, u(x)) dbeta_k . w  on the velocity
/// space of u.
Eigen::VectorXd apply_noise(const NoiseModel& model, const FeField& u,
                            const Eigen::Ref<const Eigen::VectorXd>& increments);

}  // namespace sns
