#include "sns/assembly.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace sns {

namespace {

using Triplet = Eigen::Triplet<double, int>;

/// Basis values and reference gradients of one scalar space at every
/// quadrature point of the degree-5 rule.
struct BasisTable {
  int local = 0;
  std::array<std::array<double, LagrangeSpace::kMaxLocal>, QuadratureRule::kPoints> phi{};
  std::array<std::array<Vec2, LagrangeSpace::kMaxLocal>, QuadratureRule::kPoints> dphi{};

  explicit BasisTable(const LagrangeSpace& space) : local(space.local_size()) {
    const auto& q = triangle_rule_degree5();
    for (int k = 0; k < QuadratureRule::kPoints; ++k)
      space.basis(q.xi[k], q.eta[k], phi[k], dphi[k]);
  }
};

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const std::vector<Triplet>& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

SparseMatrix scalar_mass(const TorusMesh& mesh, const LagrangeSpace& space) {
  const BasisTable table(space);
  const auto& q = triangle_rule_degree5();
  std::vector<Triplet> trip;
  trip.reserve(mesh.num_triangles() * table.local * table.local);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double det = element_geometry(mesh, t).det;
    const auto& dofs = space.element_dofs(t);
    for (int a = 0; a < table.local; ++a) {
      for (int b = 0; b < table.local; ++b) {
        double s = 0.0;
        for (int k = 0; k < QuadratureRule::kPoints; ++k)
          s += q.weight[k] * table.phi[k][a] * table.phi[k][b];
        trip.emplace_back(dofs[a], dofs[b], s * det);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(space.size());
  return from_triplets(n, n, trip);
}

}  // namespace

void SparseOperator::write_coordinate(std::ostream& os) const {
  os << "# " << matrix.rows() << ' ' << matrix.cols() << ' ' << matrix.nonZeros() << "\n";
  for (int k = 0; k < matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << "\n";
}

double convection_divergence_factor(ConvectionForm form) {
  switch (form) {
    case ConvectionForm::paper_literal: return 1.0;
    case ConvectionForm::skew: return 0.5;
    case ConvectionForm::advective: return 0.0;
  }
  return 0.0;
}

SparseMatrix component_block_diagonal(const SparseMatrix& scalar) {
  const Eigen::Index n = scalar.rows();
  std::vector<Triplet> trip;
  trip.reserve(2 * static_cast<std::size_t>(scalar.nonZeros()));
  for (int k = 0; k < scalar.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(scalar, k); it; ++it) {
      trip.emplace_back(it.row(), it.col(), it.value());
      trip.emplace_back(it.row() + n, it.col() + n, it.value());
    }
  }
  return from_triplets(2 * n, 2 * scalar.cols(), trip);
}

SparseOperator assemble_mass(const FeSpace& space, FieldKind kind) {
  if (kind == FieldKind::pressure)
    return {scalar_mass(space.mesh(), space.pressure()), true};
  return {component_block_diagonal(scalar_mass(space.mesh(), space.velocity_scalar())), true};
}

SparseOperator assemble_stiffness(const FeSpace& space) {
  const TorusMesh& mesh = space.mesh();
  const LagrangeSpace& vs = space.velocity_scalar();
  const BasisTable table(vs);
  const auto& q = triangle_rule_degree5();
  std::vector<Triplet> trip;
  trip.reserve(mesh.num_triangles() * table.local * table.local);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    const auto& dofs = vs.element_dofs(t);
    double local[LagrangeSpace::kMaxLocal][LagrangeSpace::kMaxLocal] = {};
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      std::array<Vec2, LagrangeSpace::kMaxLocal> grad;
      for (int a = 0; a < table.local; ++a) grad[a] = geo.inverse_transpose * table.dphi[k][a];
      for (int a = 0; a < table.local; ++a)
        for (int b = 0; b < table.local; ++b) local[a][b] += q.weight[k] * grad[a].dot(grad[b]);
    }
    for (int a = 0; a < table.local; ++a)
      for (int b = 0; b < table.local; ++b) trip.emplace_back(dofs[a], dofs[b], local[a][b] * geo.det);
  }
  const auto n = static_cast<Eigen::Index>(vs.size());
  return {component_block_diagonal(from_triplets(n, n, trip)), true};
}

SparseOperator assemble_divergence(const FeSpace& space) {
  const TorusMesh& mesh = space.mesh();
  const LagrangeSpace& vs = space.velocity_scalar();
  const LagrangeSpace& ps = space.pressure();
  const BasisTable vt(vs), pt(ps);
  const auto& q = triangle_rule_degree5();
  const int offset = static_cast<int>(vs.size());
  std::vector<Triplet> trip;
  trip.reserve(mesh.num_triangles() * 2 * vt.local * pt.local);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    const auto& vd = vs.element_dofs(t);
    const auto& pd = ps.element_dofs(t);
    double local[2][LagrangeSpace::kMaxLocal][LagrangeSpace::kMaxLocal] = {};
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      for (int a = 0; a < vt.local; ++a) {
        const Vec2 grad = geo.inverse_transpose * vt.dphi[k][a];
        for (int r = 0; r < pt.local; ++r) {
          const double wq = q.weight[k] * pt.phi[k][r];
          local[0][r][a] += wq * grad[0];
          local[1][r][a] += wq * grad[1];
        }
      }
    }
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < pt.local; ++r)
        for (int a = 0; a < vt.local; ++a)
          trip.emplace_back(pd[r], c * offset + vd[a], local[c][r][a] * geo.det);
  }
  return {from_triplets(static_cast<Eigen::Index>(ps.size()),
                        static_cast<Eigen::Index>(space.velocity_size()), trip),
          false};
}

SparseMatrix assemble_convection_block(const FeSpace& space, const FeField& transport,
                                       ConvectionForm form) {
  if (transport.kind() != FieldKind::velocity)
    throw std::invalid_argument("assemble_convection: transport must be a velocity field");
  if (transport.space().get() != &space)
    throw std::invalid_argument("assemble_convection: transport lives on a different space");
  const TorusMesh& mesh = space.mesh();
  const LagrangeSpace& vs = space.velocity_scalar();
  const BasisTable table(vs);
  const auto& q = triangle_rule_degree5();
  const double theta = convection_divergence_factor(form);
  const Eigen::VectorXd& coef = transport.coefficients();
  const Eigen::Index offset = static_cast<Eigen::Index>(vs.size());

  std::vector<Triplet> trip;
  trip.reserve(mesh.num_triangles() * table.local * table.local);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    const auto& dofs = vs.element_dofs(t);
    double local[LagrangeSpace::kMaxLocal][LagrangeSpace::kMaxLocal] = {};
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      std::array<Vec2, LagrangeSpace::kMaxLocal> grad;
      Vec2 b = Vec2::Zero();
      double div_b = 0.0;
      for (int a = 0; a < table.local; ++a) {
        grad[a] = geo.inverse_transpose * table.dphi[k][a];
        const double bx = coef[dofs[a]], by = coef[offset + dofs[a]];
        b[0] += bx * table.phi[k][a];
        b[1] += by * table.phi[k][a];
        div_b += bx * grad[a][0] + by * grad[a][1];
      }
      for (int w = 0; w < table.local; ++w) {
        const double wq = q.weight[k] * table.phi[k][w];
        for (int v = 0; v < table.local; ++v)
          local[w][v] += wq * (b.dot(grad[v]) + theta * div_b * table.phi[k][v]);
      }
    }
    for (int w = 0; w < table.local; ++w)
      for (int v = 0; v < table.local; ++v) trip.emplace_back(dofs[w], dofs[v], local[w][v] * geo.det);
  }
  return from_triplets(offset, offset, trip);
}

SparseOperator assemble_convection(const FeSpace& space, const FeField& transport,
                                   ConvectionForm form) {
  return {component_block_diagonal(assemble_convection_block(space, transport, form)), false};
}

Eigen::VectorXd load_vector(const FeSpace& space, const VectorFunction& f) {
  const TorusMesh& mesh = space.mesh();
  const LagrangeSpace& vs = space.velocity_scalar();
  const BasisTable table(vs);
  const auto& q = triangle_rule_degree5();
  const Eigen::Index offset = static_cast<Eigen::Index>(vs.size());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * offset);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    const auto& dofs = vs.element_dofs(t);
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      const Vec2 fv = f.value(geo.map(q.xi[k], q.eta[k]));
      const double w = q.weight[k] * geo.det;
      for (int a = 0; a < table.local; ++a) {
        rhs[dofs[a]] += w * fv[0] * table.phi[k][a];
        rhs[offset + dofs[a]] += w * fv[1] * table.phi[k][a];
      }
    }
  }
  return rhs;
}

Eigen::VectorXd load_vector(const FeSpace& space, const ScalarFunction& p) {
  const TorusMesh& mesh = space.mesh();
  const LagrangeSpace& ps = space.pressure();
  const BasisTable table(ps);
  const auto& q = triangle_rule_degree5();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    const auto& dofs = ps.element_dofs(t);
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      const double pv = p.value(geo.map(q.xi[k], q.eta[k]));
      const double w = q.weight[k] * geo.det;
      for (int a = 0; a < table.local; ++a) rhs[dofs[a]] += w * pv * table.phi[k][a];
    }
  }
  return rhs;
}

Eigen::VectorXd pressure_mean_functional(const FeSpace& space) {
  return load_vector(space, ScalarFunction{[](Point2) { return 1.0; }, {}});
}

ErrorNorms velocity_error(const FeField& u, const VectorFunction& exact) {
  const FeSpace& space = *u.space();
  const TorusMesh& mesh = space.mesh();
  const auto& q = triangle_rule_degree5();
  double l2 = 0.0, h1 = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      const Point2 x = geo.map(q.xi[k], q.eta[k]);
      const PointValue uh = u.evaluate_local(t, q.xi[k], q.eta[k]);
      const double w = q.weight[k] * geo.det;
      l2 += w * (exact.value(x) - uh.value).squaredNorm();
      if (exact.gradient) h1 += w * (exact.gradient(x) - uh.gradient).squaredNorm();
    }
  }
  return {std::sqrt(l2), std::sqrt(h1)};
}

ErrorNorms pressure_error(const FeField& p, const ScalarFunction& exact) {
  const FeSpace& space = *p.space();
  const TorusMesh& mesh = space.mesh();
  const auto& q = triangle_rule_degree5();
  double l2 = 0.0, h1 = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const ElementGeometry geo = element_geometry(mesh, t);
    for (int k = 0; k < QuadratureRule::kPoints; ++k) {
      const Point2 x = geo.map(q.xi[k], q.eta[k]);
      const PointValue ph = p.evaluate_local(t, q.xi[k], q.eta[k]);
      const double w = q.weight[k] * geo.det;
      const double d = exact.value(x) - ph.value[0];
      l2 += w * d * d;
      if (exact.gradient) h1 += w * (exact.gradient(x) - ph.gradient.row(0).transpose()).squaredNorm();
    }
  }
  return {std::sqrt(l2), std::sqrt(h1)};
}

}  // namespace sns
