#pragma once

#include <Eigen/Core>

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "sns/assembly.hpp"

namespace sns {

/// Linear solver breakdown; carries the best residual that was achieved.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct SaddleSolution {
  Eigen::VectorXd velocity;
  Eigen::VectorXd pressure;
  double velocity_residual = 0.0;    // relative
  double constraint_residual = 0.0;  // relative
  bool used_fallback = false;
};

/// Solver for
///
///   [ A  B^T  0 ] [u]   [f]
///   [ B  0    m ] [p] = [g]
///   [ 0  m^T  0 ] [l]   [0]
///
/// where m is the pressure mean functional. The scalar multiplier l removes
/// the constant pressure kernel, so the returned pressure has zero mean.
///
/// The coupling B is fixed at construction. `factorize` may be called
/// repeatedly with velocity blocks sharing one sparsity pattern; the symbolic
/// analysis is then reused and only the numeric factorization is redone.
class SaddleSolver {
 public:
  static constexpr double kTolerance = 1e-10;

  SaddleSolver(SparseMatrix coupling, Eigen::VectorXd mean);
  ~SaddleSolver();
  SaddleSolver(SaddleSolver&&) noexcept;
  SaddleSolver& operator=(SaddleSolver&&) noexcept;

  void factorize(const SparseMatrix& velocity_block);

  /// Replace the velocity block without factorizing it.
  void set_velocity_block(const SparseMatrix& velocity_block);

  /// Solve with the current velocity block by GMRES, preconditioned with the
  /// factorization held by `preconditioner` (same coupling, nearby block).
  /// Falls back to factorizing the current block when GMRES stalls. The
  /// residual contract is the same as for solve().
  SaddleSolution solve_preconditioned(const SaddleSolver& preconditioner, const Eigen::VectorXd& f,
                                      const Eigen::VectorXd& g);

  bool factorized() const { return direct_ok_ && factor_current_; }

  /// Throws SolverError when neither the direct factorization nor the
  /// Schur-complement fallback reaches kTolerance.
  SaddleSolution solve(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const;

  Eigen::Index velocity_size() const { return coupling_.cols(); }
  Eigen::Index pressure_size() const { return coupling_.rows(); }

 private:
  struct Direct;

  void build_system(const SparseMatrix& a);
  bool same_pattern(const SparseMatrix& a) const;
  SaddleSolution fallback_solve(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const;
  void residuals(SaddleSolution& s, const Eigen::VectorXd& f, const Eigen::VectorXd& g) const;

  SparseMatrix coupling_;
  Eigen::VectorXd mean_;
  SparseMatrix velocity_block_;
  SparseMatrix system_;
  std::vector<int> block_to_system_;  // nonzero index of A -> nonzero index of system_
  std::unique_ptr<Direct> direct_;
  bool direct_ok_ = false;
  bool factor_current_ = false;  // factorization matches velocity_block_
  mutable std::mutex mutex_;
};

/// One-shot convenience wrapper around SaddleSolver.
SaddleSolution solve_saddle(const SparseOperator& a, const SparseOperator& b,
                            const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                            const Eigen::VectorXd& pressure_mean);

}  // namespace sns
