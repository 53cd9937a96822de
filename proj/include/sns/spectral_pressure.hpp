#pragma once

#include <Eigen/Core>

#include <complex>
#include <memory>
#include <vector>

#include "sns/fe_space.hpp"
#include "sns/noise_model.hpp"

namespace sns {

/// Samples on the uniform N x N grid x_i = -pi + 2 pi i / N, stored with
/// index i + N j (x fastest).
using GridScalar = Eigen::ArrayXd;

struct GridVector {
  GridScalar x;
  GridScalar y;
};

/// Periodic Fourier calculus on an N x N grid. Each instance owns its FFT
/// plans; share an instance only between calls that do not overlap, or give
/// each worker its own.
class SpectralGrid {
 public:
  explicit SpectralGrid(int n);
  ~SpectralGrid();
  SpectralGrid(const SpectralGrid&) = delete;
  SpectralGrid& operator=(const SpectralGrid&) = delete;

  int resolution() const { return n_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(n_) * n_; }
  Point2 point(int i, int j) const;

  GridScalar sample(const std::function<double(Point2)>& f) const;
  GridVector sample(const std::function<Vec2(Point2)>& f) const;

  double mean(const GridScalar& f) const { return f.mean(); }
  /// L2 inner products over the torus (rectangle rule, spectrally exact for
  /// band-limited data).
  double l2_squared(const GridScalar& f) const;
  double l2_squared(const GridVector& f) const;

  GridScalar dx(const GridScalar& f) const;
  GridScalar dy(const GridScalar& f) const;
  GridScalar laplacian(const GridScalar& f) const;
  GridVector gradient(const GridScalar& f) const;
  GridScalar divergence(const GridVector& v) const;

  /// Inverse Laplacian without the mean check; the mean mode is dropped.
  GridScalar inv_laplacian_unchecked(const GridScalar& f) const;

 private:
  using Spectrum = std::vector<std::complex<double>>;
  Spectrum forward(const GridScalar& f) const;
  GridScalar backward(Spectrum s) const;
  double wave_x(int kx) const { return kx == n_ / 2 ? 0.0 : kx; }  // odd derivatives drop Nyquist
  double wave_y(int row) const;
  int signed_y(int row) const { return row <= n_ / 2 ? row : row - n_; }

  int n_;
  struct Plans;
  std::unique_ptr<Plans> plans_;
};

/// Delta^{-1} on zero-mean data; rejects |mean| > 1e-10 max(1, max|f|).
GridScalar inv_laplacian(const SpectralGrid& grid, const GridScalar& f);

/// v - grad Delta^{-1} div v.
GridVector leray_project(const SpectralGrid& grid, const GridVector& v);

/// pi_det = -Delta^{-1} div div (u tensor u).
GridScalar pressure_det(const SpectralGrid& grid, const GridVector& u);

/// Phi^pi = -grad Delta^{-1} div g.
GridVector pressure_stoch(const SpectralGrid& grid, const GridVector& g);

/// Pointwise samples of an FE function on the grid.
GridVector sample_velocity(const SpectralGrid& grid, const FeField& u);

/// Grid resolution used for transfer from mesh level n (at least 4n, even).
int transfer_resolution(int mesh_n);

struct PressureNorms {
  double deterministic = 0.0;  // dt sum_{m>=1} |grad pi_det(u_m)|^2
  double stochastic = 0.0;     // dt sum_{m>=1} sum_k |Phi^pi(u_{m-1}) e_k|^2_{W^{1,2}}
};

/// iterates = u_0..u_M. The deterministic part uses u_1..u_M, the stochastic
/// part the noise arguments u_0..u_{M-1}.
PressureNorms monitor_pressure_norms(const std::vector<FeField>& iterates, double dt,
                                     const NoiseModel& noise, const SpectralGrid& grid);

}  // namespace sns
