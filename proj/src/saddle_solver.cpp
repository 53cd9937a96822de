#include "sns/saddle_solver.hpp"

#include <Eigen/SparseLU>
#include <Eigen/UmfPackSupport>
#include <unsupported/Eigen/IterativeSolvers>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sns {

struct SaddleSolver::Direct {
  Direct() { lu.umfpackControl()(UMFPACK_STRATEGY) = UMFPACK_STRATEGY_SYMMETRIC; }
  Eigen::UmfPackLU<SparseMatrix> lu;
};

SaddleSolver::SaddleSolver(SparseMatrix coupling, Eigen::VectorXd mean)
    : coupling_(std::move(coupling)), mean_(std::move(mean)), direct_(std::make_unique<Direct>()) {
  if (mean_.size() != coupling_.rows())
    throw std::invalid_argument("SaddleSolver: mean functional must match the pressure size");
  coupling_.makeCompressed();
}

SaddleSolver::~SaddleSolver() = default;
SaddleSolver::SaddleSolver(SaddleSolver&& other) noexcept
    : coupling_(std::move(other.coupling_)),
      mean_(std::move(other.mean_)),
      velocity_block_(std::move(other.velocity_block_)),
      system_(std::move(other.system_)),
      block_to_system_(std::move(other.block_to_system_)),
      direct_(std::move(other.direct_)),
      direct_ok_(other.direct_ok_),
      factor_current_(other.factor_current_) {}
SaddleSolver& SaddleSolver::operator=(SaddleSolver&& other) noexcept {
  coupling_ = std::move(other.coupling_);
  mean_ = std::move(other.mean_);
  velocity_block_ = std::move(other.velocity_block_);
  system_ = std::move(other.system_);
  block_to_system_ = std::move(other.block_to_system_);
  direct_ = std::move(other.direct_);
  direct_ok_ = other.direct_ok_;
  factor_current_ = other.factor_current_;
  return *this;
}

bool SaddleSolver::same_pattern(const SparseMatrix& a) const {
  if (system_.size() == 0 || a.nonZeros() != velocity_block_.nonZeros() ||
      a.rows() != velocity_block_.rows())
    return false;
  const auto n = static_cast<std::size_t>(a.cols());
  return std::equal(a.outerIndexPtr(), a.outerIndexPtr() + n + 1, velocity_block_.outerIndexPtr()) &&
         std::equal(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros(),
                    velocity_block_.innerIndexPtr());
}

void SaddleSolver::build_system(const SparseMatrix& a) {
  const Eigen::Index nv = coupling_.cols(), np = coupling_.rows();
  const Eigen::Index total = nv + np + 1;
  const SparseMatrix bt = coupling_.transpose();

  // Column-by-column construction keeps track of where each entry of A lands.
  system_.resize(total, total);
  system_.reserve(a.nonZeros() + 2 * coupling_.nonZeros() + 2 * np);
  block_to_system_.assign(static_cast<std::size_t>(a.nonZeros()), -1);
  std::vector<int> outer(static_cast<std::size_t>(total) + 1, 0);
  std::vector<int> inner;
  std::vector<double> values;
  inner.reserve(static_cast<std::size_t>(a.nonZeros() + 2 * coupling_.nonZeros() + 2 * np));
  values.reserve(inner.capacity());

  for (Eigen::Index c = 0; c < nv; ++c) {
    for (int k = a.outerIndexPtr()[c]; k < a.outerIndexPtr()[c + 1]; ++k) {
      block_to_system_[static_cast<std::size_t>(k)] = static_cast<int>(inner.size());
      inner.push_back(a.innerIndexPtr()[k]);
      values.push_back(a.valuePtr()[k]);
    }
    for (int k = coupling_.outerIndexPtr()[c]; k < coupling_.outerIndexPtr()[c + 1]; ++k) {
      inner.push_back(static_cast<int>(nv) + coupling_.innerIndexPtr()[k]);
      values.push_back(coupling_.valuePtr()[k]);
    }
    outer[static_cast<std::size_t>(c) + 1] = static_cast<int>(inner.size());
  }
  for (Eigen::Index c = 0; c < np; ++c) {
    for (int k = bt.outerIndexPtr()[c]; k < bt.outerIndexPtr()[c + 1]; ++k) {
      inner.push_back(bt.innerIndexPtr()[k]);
      values.push_back(bt.valuePtr()[k]);
    }
    inner.push_back(static_cast<int>(nv + np));
    values.push_back(mean_[c]);
    outer[static_cast<std::size_t>(nv + c) + 1] = static_cast<int>(inner.size());
  }
  for (Eigen::Index r = 0; r < np; ++r) {
    inner.push_back(static_cast<int>(nv + r));
    values.push_back(mean_[r]);
  }
  outer[static_cast<std::size_t>(total)] = static_cast<int>(inner.size());

  system_ = Eigen::Map<const SparseMatrix>(total, total, static_cast<Eigen::Index>(inner.size()),
                                            outer.data(), inner.data(), values.data());
  system_.makeCompressed();
}

void SaddleSolver::factorize(const SparseMatrix& velocity_block) {
  if (velocity_block.rows() != coupling_.cols() || velocity_block.cols() != coupling_.cols())
    throw std::invalid_argument("SaddleSolver: velocity block has wrong dimensions");
  SparseMatrix a = velocity_block;
  a.makeCompressed();
  std::lock_guard lock(mutex_);
  if (same_pattern(a)) {
    for (Eigen::Index k = 0; k < a.nonZeros(); ++k)
      system_.valuePtr()[block_to_system_[static_cast<std::size_t>(k)]] = a.valuePtr()[k];
    direct_->lu.factorize(system_);
  } else {
    build_system(a);
    direct_->lu.analyzePattern(system_);
    direct_->lu.factorize(system_);
  }
  velocity_block_ = std::move(a);
  direct_ok_ = direct_->lu.info() == Eigen::Success;
  factor_current_ = true;
}

void SaddleSolver::set_velocity_block(const SparseMatrix& velocity_block) {
  if (velocity_block.rows() != coupling_.cols() || velocity_block.cols() != coupling_.cols())
    throw std::invalid_argument("SaddleSolver: velocity block has wrong dimensions");
  SparseMatrix a = velocity_block;
  a.makeCompressed();
  std::lock_guard lock(mutex_);
  if (same_pattern(a)) {
    for (Eigen::Index k = 0; k < a.nonZeros(); ++k)
      system_.valuePtr()[block_to_system_[static_cast<std::size_t>(k)]] = a.valuePtr()[k];
  } else {
    build_system(a);
    direct_ok_ = false;
  }
  velocity_block_ = std::move(a);
  factor_current_ = false;
}

namespace {

// Preconditioner adaptor: applies an existing LU factorization.
class FrozenLu {
 public:
  using LU = Eigen::UmfPackLU<SparseMatrix>;
  FrozenLu() = default;
  template <class M>
  explicit FrozenLu(const M&) {}
  template <class M>
  FrozenLu& analyzePattern(const M&) { return *this; }
  template <class M>
  FrozenLu& factorize(const M&) { return *this; }
  template <class M>
  FrozenLu& compute(const M&) { return *this; }
  template <class Rhs>
  Eigen::VectorXd solve(const Rhs& b) const { return lu_->solve(Eigen::VectorXd(b)); }
  Eigen::ComputationInfo info() const { return Eigen::Success; }
  void bind(const LU* lu) { lu_ = lu; }

 private:
  const LU* lu_ = nullptr;
};

}  // namespace

SaddleSolution SaddleSolver::solve_preconditioned(const SaddleSolver& preconditioner,
                                                  const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
  const Eigen::Index nv = coupling_.cols(), np = coupling_.rows();
  if (f.size() != nv || g.size() != np)
    throw std::invalid_argument("SaddleSolver::solve: right-hand side has wrong dimensions");
  if (system_.size() == 0) throw std::logic_error("SaddleSolver: no velocity block set");
  if (factor_current_) return solve(f, g);

  if (preconditioner.direct_ok_ && preconditioner.system_.rows() == system_.rows()) {
    std::scoped_lock lock(mutex_, preconditioner.mutex_);
    Eigen::VectorXd rhs(nv + np + 1);
    rhs << f, g, 0.0;
    Eigen::GMRES<SparseMatrix, FrozenLu> gmres;
    gmres.preconditioner().bind(&preconditioner.direct_->lu);
    gmres.compute(system_);
    gmres.setTolerance(1e-14);
    gmres.setMaxIterations(60);
    gmres.set_restart(60);
    const Eigen::VectorXd x = gmres.solve(rhs);
    SaddleSolution s;
    s.velocity = x.head(nv);
    s.pressure = x.segment(nv, np);
    residuals(s, f, g);
    if (s.velocity_residual <= kTolerance && s.constraint_residual <= kTolerance) return s;
  }
  factorize(SparseMatrix(velocity_block_));
  return solve(f, g);
}

void SaddleSolver::residuals(SaddleSolution& s, const Eigen::VectorXd& f,
                             const Eigen::VectorXd& g) const {
  // Residuals are measured against the magnitude of the terms that cancel,
  // |A||u| + |B^T||p| and |B||u|, so that homogeneous data is not penalized.
  const Eigen::VectorXd au = velocity_block_ * s.velocity;
  const Eigen::VectorXd btp = coupling_.transpose() * s.pressure;
  const Eigen::VectorXd bu = coupling_ * s.velocity;
  const Eigen::VectorXd abs_u = s.velocity.cwiseAbs();
  const Eigen::VectorXd abs_p = s.pressure.cwiseAbs();
  const double scale_v =
      std::max(f.norm(), (velocity_block_.cwiseAbs() * abs_u +
                          SparseMatrix(coupling_.transpose()).cwiseAbs() * abs_p).norm());
  const double scale_p = std::max(g.norm(), (coupling_.cwiseAbs() * abs_u).norm());
  s.velocity_residual = scale_v > 0.0 ? (au + btp - f).norm() / scale_v : 0.0;
  s.constraint_residual = scale_p > 0.0 ? (bu - g).norm() / scale_p : 0.0;
}

SaddleSolution SaddleSolver::solve(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
  const Eigen::Index nv = coupling_.cols(), np = coupling_.rows();
  if (f.size() != nv || g.size() != np)
    throw std::invalid_argument("SaddleSolver::solve: right-hand side has wrong dimensions");
  if (system_.size() == 0) throw std::logic_error("SaddleSolver::solve called before factorize");

  std::lock_guard lock(mutex_);
  if (!factor_current_) throw std::logic_error("SaddleSolver::solve: velocity block not factorized");
  if (direct_ok_) {
    Eigen::VectorXd rhs(nv + np + 1);
    rhs << f, g, 0.0;
    Eigen::VectorXd x = direct_->lu.solve(rhs);
    for (int refine = 0; refine < 3; ++refine) {
      SaddleSolution s;
      s.velocity = x.head(nv);
      s.pressure = x.segment(nv, np);
      residuals(s, f, g);
      if (s.velocity_residual <= kTolerance && s.constraint_residual <= kTolerance) return s;
      const Eigen::VectorXd r = rhs - system_ * x;
      x += direct_->lu.solve(r);
    }
  }
  return fallback_solve(f, g);
}

SaddleSolution SaddleSolver::fallback_solve(const Eigen::VectorXd& f,
                                            const Eigen::VectorXd& g) const {
  // Schur complement S p = B A^{-1} f - g on mean-zero pressures, solved by
  // BiCGStab with a factorization of the velocity block alone.
  Eigen::SparseLU<SparseMatrix> alu;
  alu.compute(velocity_block_);
  if (alu.info() != Eigen::Success)
    throw SolverError("saddle solve: system is singular and the velocity block cannot be factorized",
                      std::numeric_limits<double>::infinity());

  // Zero-mean gauge: shift by a constant so that m^T p = 0.
  auto project = [&](Eigen::VectorXd v) {
    v.array() -= mean_.dot(v) / mean_.sum();
    return v;
  };
  auto schur = [&](const Eigen::VectorXd& p) {
    const Eigen::VectorXd w = alu.solve(coupling_.transpose() * p);
    return Eigen::VectorXd(coupling_ * w);
  };
  // Range of S is orthogonal to constants; the multiplier absorbs the rest.
  auto project_dual = [&](Eigen::VectorXd v) {
    v -= (v.sum() / mean_.sum()) * mean_;
    return v;
  };

  const Eigen::VectorXd af = alu.solve(f);
  Eigen::VectorXd b = project_dual(coupling_ * af - g);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  const Eigen::VectorXd r0 = r;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size()), s_dir = v;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  const double bnorm = std::max(b.norm(), std::numeric_limits<double>::min());
  const int max_iter = static_cast<int>(std::max<Eigen::Index>(200, 4 * b.size()));
  for (int it = 0; it < max_iter && r.norm() > 1e-13 * bnorm; ++it) {
    const double rho_new = r0.dot(r);
    if (rho_new == 0.0) break;
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    s_dir = r + beta * (s_dir - omega * v);
    v = project_dual(schur(s_dir));
    alpha = rho / r0.dot(v);
    const Eigen::VectorXd s = r - alpha * v;
    const Eigen::VectorXd t = project_dual(schur(s));
    omega = t.squaredNorm() > 0.0 ? t.dot(s) / t.squaredNorm() : 0.0;
    p += alpha * s_dir + omega * s;
    r = s - omega * t;
    if (omega == 0.0) break;
  }
  p = project(p);

  SaddleSolution sol;
  sol.pressure = p;
  sol.velocity = alu.solve(f - coupling_.transpose() * p);
  sol.used_fallback = true;
  residuals(sol, f, g);
  if (sol.velocity_residual > kTolerance || sol.constraint_residual > kTolerance) {
    throw SolverError("saddle solve: Schur-complement iteration did not reach tolerance",
                      std::max(sol.velocity_residual, sol.constraint_residual));
  }
  return sol;
}

SaddleSolution solve_saddle(const SparseOperator& a, const SparseOperator& b,
                            const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                            const Eigen::VectorXd& pressure_mean) {
  SaddleSolver solver(b.matrix, pressure_mean);
  solver.factorize(a.matrix);
  return solver.solve(f, g);
}

}  // namespace sns
