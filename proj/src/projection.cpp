#include "sns/projection.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <stdexcept>

namespace sns {

namespace {

VectorFunction sample(const FeField& v) {
  return {[&v](Point2 p) { return Vec2(v.evaluate(p).value); }, {}};
}

}  // namespace

VelocityProjector::VelocityProjector(FeSpacePtr space)
    : space_(std::move(space)),
      mass_(assemble_mass(*space_, FieldKind::velocity).matrix),
      divergence_(assemble_divergence(*space_).matrix),
      solver_(divergence_, pressure_mean_functional(*space_)) {
  solver_.factorize(mass_);
}

FeField VelocityProjector::project_load(const Eigen::VectorXd& load) const {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(divergence_.rows());
  SaddleSolution s = solver_.solve(load, zero);
  return FeField(space_, FieldKind::velocity, std::move(s.velocity));
}

FeField VelocityProjector::project(const VectorFunction& v) const {
  return project_load(load_vector(*space_, v));
}

FeField VelocityProjector::project(const FeField& v) const {
  if (v.kind() != FieldKind::velocity)
    throw std::invalid_argument("VelocityProjector: expected a velocity field");
  if (v.space().get() == space_.get()) return project_load(mass_ * v.coefficients());
  return project_load(load_vector(*space_, sample(v)));
}

PressureProjector::PressureProjector(FeSpacePtr space)
    : space_(std::move(space)), mass_(assemble_mass(*space_, FieldKind::pressure).matrix) {
  solver_.compute(mass_);
  if (solver_.info() != Eigen::Success)
    throw SolverError("pressure mass matrix factorization failed", 0.0);
}

FeField PressureProjector::project(const ScalarFunction& p) const {
  return FeField(space_, FieldKind::pressure, solver_.solve(load_vector(*space_, p)));
}

FeField PressureProjector::project(const FeField& p) const {
  if (p.kind() != FieldKind::pressure)
    throw std::invalid_argument("PressureProjector: expected a pressure field");
  if (p.space().get() == space_.get()) return p;
  return project(ScalarFunction{[&p](Point2 x) { return p.evaluate(x).value[0]; }, {}});
}

FeField project_velocity(const FeSpacePtr& space, const VectorFunction& v) {
  return VelocityProjector(space).project(v);
}

FeField project_velocity(const FeSpacePtr& space, const FeField& v) {
  return VelocityProjector(space).project(v);
}

FeField project_pressure(const FeSpacePtr& space, const ScalarFunction& p) {
  return PressureProjector(space).project(p);
}

FeField project_pressure(const FeSpacePtr& space, const FeField& p) {
  return PressureProjector(space).project(p);
}

double discrete_divergence(const SparseMatrix& divergence, const FeField& u) {
  return (divergence * u.coefficients()).cwiseAbs().maxCoeff();
}

double infsup_constant(const FeSpace& space) {
  const SparseMatrix h1 =
      assemble_stiffness(space).matrix + assemble_mass(space, FieldKind::velocity).matrix;
  const SparseMatrix b = assemble_divergence(space).matrix;
  const Eigen::MatrixXd mp = Eigen::MatrixXd(assemble_mass(space, FieldKind::pressure).matrix);
  const Eigen::VectorXd mean = pressure_mean_functional(space);

  Eigen::SimplicialLDLT<SparseMatrix> h1_solver(h1);
  if (h1_solver.info() != Eigen::Success)
    throw SolverError("inf-sup: H1 Gram matrix factorization failed", 0.0);
  const Eigen::MatrixXd bt = Eigen::MatrixXd(SparseMatrix(b.transpose()));
  const Eigen::MatrixXd x = h1_solver.solve(bt);
  Eigen::MatrixXd schur = Eigen::MatrixXd(b * x);
  schur = 0.5 * (schur + schur.transpose());

  // Move the constant pressure (kernel of B^T) to eigenvalue 100; the rest of
  // the spectrum is bounded by 2 because |div v| <= sqrt(2) |grad v|.
  const double area = mean.sum();
  schur += (100.0 / area) * mean * mean.transpose();

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(schur, mp, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success)
    throw SolverError("inf-sup: generalized eigenvalue solver failed", 0.0);
  const double lambda_min = eig.eigenvalues().minCoeff();
  return std::sqrt(std::max(lambda_min, 0.0));
}

}  // namespace sns
