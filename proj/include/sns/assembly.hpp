#pragma once

#include <Eigen/SparseCore>

#include <iosfwd>

#include "sns/fe_space.hpp"

namespace sns {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct SparseOperator {
  SparseMatrix matrix;
  bool symmetric = false;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }

  /// Coordinate listing "row col value", one entry per line.
  void write_coordinate(std::ostream& os) const;
};

/// Form of the transport term used by the fully discrete scheme.
///   paper_literal: ((grad v) b + (div b) v) . w
///   skew:          ((grad v) b + 1/2 (div b) v) . w   (C[v,v] = 0)
///   advective:     (grad v) b . w
enum class ConvectionForm { paper_literal, skew, advective };

double convection_divergence_factor(ConvectionForm form);

/// Scalar mass matrix of the velocity (kind = velocity, block diagonal over the
/// two components) or pressure space.
SparseOperator assemble_mass(const FeSpace& space, FieldKind kind);

/// Velocity stiffness  A[v, w] = int grad v : grad w.
SparseOperator assemble_stiffness(const FeSpace& space);

/// Pressure-by-velocity coupling  B[q, v] = int div(v) q.
SparseOperator assemble_divergence(const FeSpace& space);

/// Velocity transport operator C[w, v] (row = test w, column = trial v) for
/// the transport field b.
SparseOperator assemble_convection(const FeSpace& space, const FeField& transport,
                                   ConvectionForm form);

/// Per-component scalar block of assemble_convection (the two velocity
/// components share it).
SparseMatrix assemble_convection_block(const FeSpace& space, const FeField& transport,
                                       ConvectionForm form);

/// Expand a scalar velocity block into the two-component block diagonal.
SparseMatrix component_block_diagonal(const SparseMatrix& scalar);

/// Right-hand side  F[w] = int f . w  over velocity test functions.
Eigen::VectorXd load_vector(const FeSpace& space, const VectorFunction& f);

/// Right-hand side  F[q] = int p q  over pressure test functions.
Eigen::VectorXd load_vector(const FeSpace& space, const ScalarFunction& p);

/// Pressure mean functional m[q] = int q (equals M_p * 1).
Eigen::VectorXd pressure_mean_functional(const FeSpace& space);

/// L2 and H1-seminorm differences between a velocity field and an exact one.
struct ErrorNorms {
  double l2 = 0.0;
  double h1 = 0.0;
};

ErrorNorms velocity_error(const FeField& u, const VectorFunction& exact);
ErrorNorms pressure_error(const FeField& p, const ScalarFunction& exact);

}  // namespace sns
