#include "sns/noise_model.hpp"

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>

namespace sns {

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::additive: return "additive";
    case NoiseMode::linear_mult: return "linear_mult";
    case NoiseMode::nonlinear_mult: return "nonlinear_mult";
  }
  return "additive";
}

NoiseMode parse_noise_mode(const std::string& text) {
  if (text == "additive") return NoiseMode::additive;
  if (text == "linear_mult") return NoiseMode::linear_mult;
  if (text == "nonlinear_mult") return NoiseMode::nonlinear_mult;
  throw std::invalid_argument("unknown noise mode '" + text +
                              "' (expected additive, linear_mult or nonlinear_mult)");
}

namespace {

std::vector<NoiseModel::Wave> enumerate_waves(int count) {
  // Half-plane wavevectors sorted by |kappa|^2; each contributes cos then sin.
  const int needed = (count + 1) / 2;
  for (int radius = static_cast<int>(std::ceil(std::sqrt(needed))) + 1;; radius *= 2) {
    std::vector<std::array<int, 2>> kappa;
    for (int a = 0; a <= radius; ++a)
      for (int b = -radius; b <= radius; ++b)
        if (a > 0 || b > 0) kappa.push_back({a, b});
    std::sort(kappa.begin(), kappa.end(), [](const auto& p, const auto& q) {
      const int np = p[0] * p[0] + p[1] * p[1], nq = q[0] * q[0] + q[1] * q[1];
      if (np != nq) return np < nq;
      if (p[0] != q[0]) return p[0] > q[0];
      return p[1] > q[1];
    });
    const auto& last = kappa[static_cast<std::size_t>(needed - 1)];
    if (last[0] * last[0] + last[1] * last[1] > radius * radius) continue;
    std::vector<NoiseModel::Wave> waves;
    for (int i = 0; i < needed; ++i) {
      waves.push_back({kappa[i][0], kappa[i][1], 0});
      waves.push_back({kappa[i][0], kappa[i][1], 1});
    }
    waves.resize(static_cast<std::size_t>(count));
    return waves;
  }
}

}  // namespace

NoiseModel::NoiseModel(NoiseParameters params) : params_(params) {
  if (params_.modes < 1) throw std::invalid_argument("NoiseModel: mode count K must be >= 1");
  if (!(params_.decay > 0.0)) throw std::invalid_argument("NoiseModel: decay must be positive");
  if (!(params_.scale >= 0.0)) throw std::invalid_argument("NoiseModel: scale must be >= 0");
  waves_ = enumerate_waves((params_.modes + 1) / 2);
}

NoiseModel NoiseModel::with_modes(int modes) const {
  NoiseParameters p = params_;
  p.modes = modes;
  return NoiseModel(p);
}

Vec2 NoiseModel::value(int k, Point2 x, const Vec2& xi) const {
  const Wave& w = wave((k + 1) / 2);
  const int c = (k - 1) % 2;
  const double theta = w.a * x.x + w.b * x.y;
  const double rho = w.phase == 0 ? std::cos(theta) : std::sin(theta);
  double psi = 1.0;
  if (params_.mode == NoiseMode::linear_mult) psi = xi[c];
  if (params_.mode == NoiseMode::nonlinear_mult) psi = std::sqrt(1.0 + xi.squaredNorm());
  Vec2 g = Vec2::Zero();
  g[c] = params_.scale * std::pow(static_cast<double>(k), -params_.decay) * rho * psi;
  return g;
}

ModeJet NoiseModel::jet(int k, Point2 x, const Vec2& xi, bool second_order) const {
  const Wave& w = wave((k + 1) / 2);
  const int c = (k - 1) % 2;
  const double amp = params_.scale * std::pow(static_cast<double>(k), -params_.decay);
  const double theta = w.a * x.x + w.b * x.y;
  const double rho = w.phase == 0 ? std::cos(theta) : std::sin(theta);
  const double drho = w.phase == 0 ? -std::sin(theta) : std::cos(theta);
  const Vec2 kappa(w.a, w.b);
  const Vec2 grad_rho = drho * kappa;
  const double k2 = kappa.squaredNorm();

  double psi = 1.0;
  Vec2 dpsi = Vec2::Zero();
  double hess_psi_sq = 0.0;
  if (params_.mode == NoiseMode::linear_mult) {
    psi = xi[c];
    dpsi[c] = 1.0;
  } else if (params_.mode == NoiseMode::nonlinear_mult) {
    const double r2 = 1.0 + xi.squaredNorm();
    psi = std::sqrt(r2);
    dpsi = xi / psi;
    // eigenvalues of the Hessian: 1/r and 1/r^3
    hess_psi_sq = 1.0 / r2 + 1.0 / (r2 * r2 * r2);
  }

  ModeJet j;
  j.value[c] = amp * rho * psi;
  j.dx.row(c) = amp * psi * grad_rho.transpose();
  j.dxi.row(c) = amp * rho * dpsi.transpose();
  if (second_order) {
    j.dxx_sq = amp * amp * psi * psi * rho * rho * k2 * k2;
    j.dxixi_sq = amp * amp * rho * rho * hess_psi_sq;
    j.dxdxi_sq = amp * amp * grad_rho.squaredNorm() * dpsi.squaredNorm();
  }
  return j;
}

NoiseModel make_default_family(double decay, double scale, NoiseMode mode, int modes) {
  if (decay < 2.0)
    throw std::invalid_argument("make_default_family: decay s must be >= 2, got " +
                                std::to_string(decay));
  return NoiseModel({modes, decay, scale, mode});
}

namespace {

std::vector<double> condition_suprema(const NoiseModel& model, bool second) {
  constexpr int kGrid = 12;
  const std::array<double, 7> radii{0.0, 0.5, 1.0, 3.0, 10.0, 100.0, 1000.0};
  constexpr int kAngles = 8;
  std::vector<double> sup(second ? 6 : 3, 0.0);
  for (int ix = 0; ix < kGrid; ++ix) {
    for (int iy = 0; iy < kGrid; ++iy) {
      const Point2 x{-kPi + kTwoPi * (ix + 0.37) / kGrid, -kPi + kTwoPi * (iy + 0.61) / kGrid};
      for (double r : radii) {
        for (int ia = 0; ia < (r == 0.0 ? 1 : kAngles); ++ia) {
          const double phi = kTwoPi * (ia + 0.25) / kAngles;
          const Vec2 xi(r * std::cos(phi), r * std::sin(phi));
          const double weight = 1.0 + xi.squaredNorm();
          std::array<double, 6> s{};
          for (int k = 1; k <= model.modes(); ++k) {
            const ModeJet j = model.jet(k, x, xi, second);
            s[0] += j.value.squaredNorm();
            s[1] += j.dxi.squaredNorm();
            s[2] += j.dx.squaredNorm();
            s[3] += j.dxx_sq;
            s[4] += j.dxixi_sq;
            s[5] += j.dxdxi_sq;
          }
          const std::array<double, 6> normalized{s[0] / weight, s[1], s[2] / weight,
                                                 s[3] / weight, s[4] * weight, s[5]};
          for (std::size_t i = 0; i < sup.size(); ++i) sup[i] = std::max(sup[i], normalized[i]);
        }
      }
    }
  }
  return sup;
}

}  // namespace

NoiseConditionReport validate_conditions(const NoiseModel& model, bool include_second_order) {
  NoiseConditionReport report;
  report.modes = model.modes();
  report.names = {"value", "grad_xi", "grad_x"};
  if (include_second_order) {
    report.names.insert(report.names.end(), {"hess_x", "hess_xi", "grad_x_grad_xi"});
  }
  report.constants = condition_suprema(model, include_second_order);
  report.constants_doubled = condition_suprema(model.with_modes(2 * model.modes()), include_second_order);
  report.constants_quadrupled =
      condition_suprema(model.with_modes(4 * model.modes()), include_second_order);
  constexpr double kMaxChange = 0.05;
  constexpr double kMaxIncrementRatio = 0.75;
  report.passed = true;
  for (std::size_t i = 0; i < report.constants.size(); ++i) {
    const double a = report.constants[i], b = report.constants_doubled[i],
                 c = report.constants_quadrupled[i];
    constexpr double inf = std::numeric_limits<double>::infinity();
    double change = 0.0, ratio = 0.0;
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) {
      change = ratio = inf;
    } else {
      if (a > 0.0) change = std::abs(b - a) / a;
      else if (b > 0.0) change = inf;
      // increments below round-off of the sum carry no information
      const double d1 = b - a, d2 = c - b;
      if (d1 > 1e-12 * std::max(a, 1e-300)) ratio = d2 / d1;
      else if (d2 > 1e-12 * std::max(b, 1e-300)) ratio = inf;
    }
    report.relative_change.push_back(change);
    report.increment_ratio.push_back(ratio);
    if (!(change <= kMaxChange) || !(ratio < kMaxIncrementRatio)) report.passed = false;
  }
  return report;
}

namespace {

// UniformRandomBitGenerator over a ChaCha20 keystream; key and nonce carry the
// draw's coordinates so each (seed, path, k, m) owns an independent stream.
class KeyStream {
 public:
  using result_type = std::uint64_t;
  KeyStream(std::uint64_t seed, std::uint64_t path, std::uint32_t k, std::uint32_t m) {
    static const bool ready = sodium_init() >= 0;
    if (!ready) throw std::runtime_error("libsodium initialization failed");
    key_.fill(0);
    std::memcpy(key_.data(), &seed, sizeof seed);
    std::memcpy(key_.data() + 8, &path, sizeof path);
    const char tag[] = "sns-wiener";
    std::memcpy(key_.data() + 16, tag, sizeof tag - 1);
    std::memcpy(nonce_.data(), &k, sizeof k);
    std::memcpy(nonce_.data() + 4, &m, sizeof m);
    nonce_[8] = nonce_[9] = nonce_[10] = nonce_[11] = 0;
  }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() {
    if (pos_ == block_.size()) refill();
    return block_[pos_++];
  }

 private:
  void refill() {
    std::array<unsigned char, 64> zeros{};
    std::array<unsigned char, 64> out{};
    crypto_stream_chacha20_ietf_xor_ic(out.data(), zeros.data(), out.size(), nonce_.data(), counter_++,
                                       key_.data());
    std::memcpy(block_.data(), out.data(), out.size());
    pos_ = 0;
  }
  std::array<unsigned char, crypto_stream_chacha20_ietf_KEYBYTES> key_{};
  std::array<unsigned char, crypto_stream_chacha20_ietf_NONCEBYTES> nonce_{};
  std::array<std::uint64_t, 8> block_{};
  std::size_t pos_ = 8;
  std::uint32_t counter_ = 0;
};

}  // namespace

double keyed_normal(std::uint64_t seed, std::uint64_t path, std::uint32_t k, std::uint32_t m) {
  KeyStream engine(seed, path, k, m);
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(engine);
}

WienerPath sample_path(int steps, int modes, double final_time, std::uint64_t master_seed,
                       std::uint64_t path_id) {
  if (steps < 1 || modes < 1) throw std::invalid_argument("sample_path: M and K must be >= 1");
  if (!(final_time > 0.0)) throw std::invalid_argument("sample_path: final time must be positive");
  WienerPath path;
  path.steps = steps;
  path.dt = final_time / steps;
  path.master_seed = master_seed;
  path.path_id = path_id;
  path.increments.resize(steps, modes);
  const double sd = std::sqrt(path.dt);
  for (int k = 0; k < modes; ++k)
    for (int m = 0; m < steps; ++m)
      path.increments(m, k) = sd * keyed_normal(master_seed, path_id, static_cast<std::uint32_t>(k),
                                                static_cast<std::uint32_t>(m));
  return path;
}

WienerPath coarsen_path(const WienerPath& path, int factor) {
  if (factor < 1 || path.steps % factor != 0) {
    throw std::invalid_argument("coarsen_path: factor " + std::to_string(factor) +
                                " does not divide M = " + std::to_string(path.steps));
  }
  WienerPath out = path;
  out.steps = path.steps / factor;
  out.dt = path.dt * factor;
  out.coarsening = path.coarsening * factor;
  out.increments = Eigen::MatrixXd::Zero(out.steps, path.modes());
  for (int m = 0; m < out.steps; ++m)
    for (int r = 0; r < factor; ++r) out.increments.row(m) += path.increments.row(m * factor + r);
  return out;
}

Eigen::VectorXd apply_noise(const NoiseModel& model, const FeField& u,
                            const Eigen::Ref<const Eigen::VectorXd>& increments) {
  if (u.kind() != FieldKind::velocity) throw std::invalid_argument("apply_noise: u must be a velocity");
  if (increments.size() < model.modes())
    throw std::invalid_argument("apply_noise: fewer increments than noise modes");
  const FeSpace& space = *u.space();
  const LagrangeSpace& scalar = space.velocity_scalar();
  const Eigen::Index offset = static_cast<Eigen::Index>(scalar.size());
  Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.velocity_size()));
  if (increments.head(model.modes()).cwiseAbs().maxCoeff() == 0.0) return load;

  const QuadratureRule& rule = triangle_rule_degree5();
  std::array<std::array<double, LagrangeSpace::kMaxLocal>, QuadratureRule::kPoints> phi{};
  std::array<Vec2, LagrangeSpace::kMaxLocal> dphi{};
  for (int q = 0; q < QuadratureRule::kPoints; ++q) scalar.basis(rule.xi[q], rule.eta[q], phi[q], dphi);

  for (std::size_t t = 0; t < space.mesh().num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(space.mesh(), t);
    const auto& dofs = scalar.element_dofs(t);
    for (int q = 0; q < QuadratureRule::kPoints; ++q) {
      const Point2 x = geo.map(rule.xi[q], rule.eta[q]);
      const Vec2 xi = model.multiplicative() ? u.evaluate_local(t, rule.xi[q], rule.eta[q]).value
                                             : Vec2::Zero();
      Vec2 g = Vec2::Zero();
      for (int k = 1; k <= model.modes(); ++k) g += increments[k - 1] * model.value(k, x, xi);
      const double w = rule.weight[q] * std::abs(geo.det);
      for (int a = 0; a < scalar.local_size(); ++a) {
        load[dofs[a]] += w * g[0] * phi[q][a];
        load[offset + dofs[a]] += w * g[1] * phi[q][a];
      }
    }
  }
  return load;
}

}  // namespace sns
