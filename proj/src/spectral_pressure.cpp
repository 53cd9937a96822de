#include "sns/spectral_pressure.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>

namespace sns {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;  // the FFTW planner is not thread-safe
  return m;
}
}  // namespace

struct SpectralGrid::Plans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  mutable std::mutex use;  // plans execute on the owned buffers
};

SpectralGrid::SpectralGrid(int n) : n_(n), plans_(std::make_unique<Plans>()) {
  if (n < 4 || n % 2 != 0)
    throw std::invalid_argument("SpectralGrid: N must be even and >= 4, got " + std::to_string(n));
  const std::size_t half = static_cast<std::size_t>(n) * (n / 2 + 1);
  plans_->real = fftw_alloc_real(static_cast<std::size_t>(n) * n);
  plans_->spec = fftw_alloc_complex(half);
  std::lock_guard lock(planner_mutex());
  plans_->r2c = fftw_plan_dft_r2c_2d(n, n, plans_->real, plans_->spec, FFTW_ESTIMATE);
  plans_->c2r = fftw_plan_dft_c2r_2d(n, n, plans_->spec, plans_->real, FFTW_ESTIMATE);
}

SpectralGrid::~SpectralGrid() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plans_->r2c);
  fftw_destroy_plan(plans_->c2r);
  fftw_free(plans_->real);
  fftw_free(plans_->spec);
}

Point2 SpectralGrid::point(int i, int j) const {
  return {-kPi + kTwoPi * i / n_, -kPi + kTwoPi * j / n_};
}

double SpectralGrid::wave_y(int row) const { return row == n_ / 2 ? 0.0 : signed_y(row); }

GridScalar SpectralGrid::sample(const std::function<double(Point2)>& f) const {
  GridScalar out(size());
  for (int j = 0; j < n_; ++j)
    for (int i = 0; i < n_; ++i) out[i + n_ * j] = f(point(i, j));
  return out;
}

GridVector SpectralGrid::sample(const std::function<Vec2(Point2)>& f) const {
  GridVector out{GridScalar(size()), GridScalar(size())};
  for (int j = 0; j < n_; ++j)
    for (int i = 0; i < n_; ++i) {
      const Vec2 v = f(point(i, j));
      out.x[i + n_ * j] = v[0];
      out.y[i + n_ * j] = v[1];
    }
  return out;
}

double SpectralGrid::l2_squared(const GridScalar& f) const {
  return f.square().sum() * (kTwoPi * kTwoPi) / static_cast<double>(size());
}

double SpectralGrid::l2_squared(const GridVector& f) const { return l2_squared(f.x) + l2_squared(f.y); }

SpectralGrid::Spectrum SpectralGrid::forward(const GridScalar& f) const {
  if (f.size() != size()) throw std::invalid_argument("SpectralGrid: field has wrong size");
  const int cols = n_ / 2 + 1;
  Spectrum s(static_cast<std::size_t>(n_) * cols);
  std::lock_guard lock(plans_->use);
  std::copy(f.data(), f.data() + size(), plans_->real);
  fftw_execute(plans_->r2c);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = {plans_->spec[i][0], plans_->spec[i][1]};
  return s;
}

GridScalar SpectralGrid::backward(Spectrum s) const {
  GridScalar out(size());
  std::lock_guard lock(plans_->use);
  for (std::size_t i = 0; i < s.size(); ++i) {
    plans_->spec[i][0] = s[i].real();
    plans_->spec[i][1] = s[i].imag();
  }
  fftw_execute(plans_->c2r);
  const double norm = 1.0 / static_cast<double>(size());
  for (Eigen::Index i = 0; i < size(); ++i) out[i] = plans_->real[i] * norm;
  return out;
}

// Layout of the half spectrum: row = y frequency index (0..N-1), column = x
// frequency 0..N/2.
GridScalar SpectralGrid::dx(const GridScalar& f) const {
  Spectrum s = forward(f);
  const int cols = n_ / 2 + 1;
  for (int r = 0; r < n_; ++r)
    for (int c = 0; c < cols; ++c) s[static_cast<std::size_t>(r * cols + c)] *= std::complex<double>(0.0, wave_x(c));
  return backward(std::move(s));
}

GridScalar SpectralGrid::dy(const GridScalar& f) const {
  Spectrum s = forward(f);
  const int cols = n_ / 2 + 1;
  for (int r = 0; r < n_; ++r)
    for (int c = 0; c < cols; ++c) s[static_cast<std::size_t>(r * cols + c)] *= std::complex<double>(0.0, wave_y(r));
  return backward(std::move(s));
}

GridScalar SpectralGrid::laplacian(const GridScalar& f) const {
  Spectrum s = forward(f);
  const int cols = n_ / 2 + 1;
  for (int r = 0; r < n_; ++r) {
    const double ky = signed_y(r);
    for (int c = 0; c < cols; ++c) s[static_cast<std::size_t>(r * cols + c)] *= -(c * c + ky * ky);
  }
  return backward(std::move(s));
}

GridScalar SpectralGrid::inv_laplacian_unchecked(const GridScalar& f) const {
  Spectrum s = forward(f);
  const int cols = n_ / 2 + 1;
  for (int r = 0; r < n_; ++r) {
    const double ky = signed_y(r);
    for (int c = 0; c < cols; ++c) {
      const double k2 = c * c + ky * ky;
      s[static_cast<std::size_t>(r * cols + c)] = k2 > 0.0 ? s[static_cast<std::size_t>(r * cols + c)] / -k2 : 0.0;
    }
  }
  return backward(std::move(s));
}

GridVector SpectralGrid::gradient(const GridScalar& f) const { return {dx(f), dy(f)}; }

GridScalar SpectralGrid::divergence(const GridVector& v) const { return dx(v.x) + dy(v.y); }

GridScalar inv_laplacian(const SpectralGrid& grid, const GridScalar& f) {
  const double scale = std::max(1.0, f.abs().maxCoeff());
  if (std::abs(f.mean()) > 1e-10 * scale) {
    throw std::invalid_argument("inv_laplacian: input must have zero mean, got mean " +
                                std::to_string(f.mean()));
  }
  return grid.inv_laplacian_unchecked(f);
}

GridVector pressure_stoch(const SpectralGrid& grid, const GridVector& g) {
  const GridVector grad = grid.gradient(grid.inv_laplacian_unchecked(grid.divergence(g)));
  return {-grad.x, -grad.y};
}

GridVector leray_project(const SpectralGrid& grid, const GridVector& v) {
  const GridVector p = pressure_stoch(grid, v);
  return {v.x + p.x, v.y + p.y};
}

GridScalar pressure_det(const SpectralGrid& grid, const GridVector& u) {
  const GridScalar uxx = u.x * u.x, uxy = u.x * u.y, uyy = u.y * u.y;
  const GridScalar divdiv =
      grid.dx(grid.dx(uxx)) + 2.0 * grid.dx(grid.dy(uxy)) + grid.dy(grid.dy(uyy));
  return -grid.inv_laplacian_unchecked(divdiv);
}

GridVector sample_velocity(const SpectralGrid& grid, const FeField& u) {
  if (u.kind() != FieldKind::velocity) throw std::invalid_argument("sample_velocity: not a velocity");
  return grid.sample([&u](Point2 p) { return Vec2(u.evaluate(p).value); });
}

int transfer_resolution(int mesh_n) { return std::max(4, 4 * mesh_n); }

PressureNorms monitor_pressure_norms(const std::vector<FeField>& iterates, double dt,
                                     const NoiseModel& noise, const SpectralGrid& grid) {
  PressureNorms out;
  for (std::size_t m = 1; m < iterates.size(); ++m) {
    const GridVector u = sample_velocity(grid, iterates[m]);
    out.deterministic += dt * grid.l2_squared(grid.gradient(pressure_det(grid, u)));

    // Additive noise does not see u: every step contributes the same amount.
    if (!noise.multiplicative() && m > 1) {
      out.stochastic += out.stochastic / static_cast<double>(m - 1);
      continue;
    }
    const GridVector prev = sample_velocity(grid, iterates[m - 1]);
    for (int k = 1; k <= noise.modes(); ++k) {
      GridVector g{GridScalar(grid.size()), GridScalar(grid.size())};
      for (int j = 0; j < grid.resolution(); ++j)
        for (int i = 0; i < grid.resolution(); ++i) {
          const Eigen::Index idx = i + static_cast<Eigen::Index>(grid.resolution()) * j;
          const Vec2 v = noise.value(k, grid.point(i, j), Vec2(prev.x[idx], prev.y[idx]));
          g.x[idx] = v[0];
          g.y[idx] = v[1];
        }
      const GridVector p = pressure_stoch(grid, g);
      out.stochastic += dt * (grid.l2_squared(p) + grid.l2_squared(grid.gradient(p.x)) +
                              grid.l2_squared(grid.gradient(p.y)));
    }
  }
  return out;
}

}  // namespace sns
