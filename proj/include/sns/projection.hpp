#pragma once

#include <Eigen/SparseCholesky>

#include "sns/assembly.hpp"
#include "sns/saddle_solver.hpp"

namespace sns {

/// L2-orthogonal projection onto the discretely divergence-free subspace
/// V^h_div, realized as the constrained mass problem
///   M u + B^T p = F,  B u = 0.
/// The factorization is built once and reused for every projected field.
class VelocityProjector {
 public:
  explicit VelocityProjector(FeSpacePtr space);

  FeField project(const VectorFunction& v) const;
  /// Fields on the same space use M v as load; other spaces are sampled.
  FeField project(const FeField& v) const;

  const SparseMatrix& mass() const { return mass_; }
  const SparseMatrix& divergence() const { return divergence_; }
  const FeSpacePtr& space() const { return space_; }

 private:
  FeField project_load(const Eigen::VectorXd& load) const;

  FeSpacePtr space_;
  SparseMatrix mass_;
  SparseMatrix divergence_;
  SaddleSolver solver_;
};

/// L2-orthogonal projection onto the pressure space.
class PressureProjector {
 public:
  explicit PressureProjector(FeSpacePtr space);

  FeField project(const ScalarFunction& p) const;
  FeField project(const FeField& p) const;

 private:
  FeSpacePtr space_;
  SparseMatrix mass_;
  Eigen::SimplicialLDLT<SparseMatrix> solver_;
};

FeField project_velocity(const FeSpacePtr& space, const VectorFunction& v);
FeField project_velocity(const FeSpacePtr& space, const FeField& v);
FeField project_pressure(const FeSpacePtr& space, const ScalarFunction& p);
FeField project_pressure(const FeSpacePtr& space, const FeField& p);

/// max over pressure basis functions q of |int div(u) q|.
double discrete_divergence(const SparseMatrix& divergence, const FeField& u);

/// Discrete inf-sup constant
///   beta_h = min_q sup_v (div v, q) / (|v|_{H1} |q|_{L2}),
/// computed as the square root of the smallest eigenvalue of
///   B (K + M)^{-1} B^T q = lambda M_p q
/// on the complement of the constant pressure.
double infsup_constant(const FeSpace& space);

}  // namespace sns
