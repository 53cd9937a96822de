#include "sns/fe_space.hpp"

#include <Eigen/LU>

#include <stdexcept>
#include <string>

namespace sns {

const QuadratureRule& triangle_rule_degree5() {
  static const QuadratureRule rule = [] {
    QuadratureRule q;
    const double a1 = 0.059715871789770, b1 = 0.470142064105115;
    const double a2 = 0.797426985353087, b2 = 0.101286507323456;
    const double w0 = 0.225, w1 = 0.132394152788506, w2 = 0.125939180544827;
    q.xi = {1.0 / 3.0, a1, b1, b1, a2, b2, b2};
    q.eta = {1.0 / 3.0, b1, a1, b1, b2, a2, b2};
    q.weight = {w0, w1, w1, w1, w2, w2, w2};
    for (double& w : q.weight) w *= 0.5;
    return q;
  }();
  return rule;
}

ElementGeometry element_geometry(const TorusMesh& mesh, std::size_t t) {
  ElementGeometry g;
  const Point2 p0 = mesh.corner(t, 0), p1 = mesh.corner(t, 1), p2 = mesh.corner(t, 2);
  g.origin = p0;
  g.jacobian << p1.x - p0.x, p2.x - p0.x, p1.y - p0.y, p2.y - p0.y;
  g.det = g.jacobian.determinant();
  g.inverse_transpose = g.jacobian.inverse().transpose();
  return g;
}

LagrangeSpace::LagrangeSpace(const TorusMesh& mesh, int degree) : degree_(degree) {
  if (degree != 1 && degree != 2) {
    throw std::invalid_argument("LagrangeSpace: supported degrees are 1 and 2, got " +
                                std::to_string(degree));
  }
  const std::size_t nv = mesh.num_vertices();
  size_ = degree == 1 ? nv : nv + mesh.num_edges();
  nodes_.assign(size_, Point2{});
  for (std::size_t v = 0; v < nv; ++v) nodes_[v] = mesh.vertices()[v];

  dofs_.resize(mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    auto& d = dofs_[t];
    d.fill(-1);
    const auto& tri = mesh.triangle(t);
    for (int a = 0; a < 3; ++a) d[a] = tri[a];
    if (degree == 2) {
      const auto& edges = mesh.triangle_edges(t);
      for (int e = 0; e < 3; ++e) {
        const int dof = static_cast<int>(nv) + edges[e];
        d[3 + e] = dof;
        const Point2 p = mesh.corner(t, e), q = mesh.corner(t, (e + 1) % 3);
        nodes_[dof] = {wrap_coordinate(0.5 * (p.x + q.x)), wrap_coordinate(0.5 * (p.y + q.y))};
      }
    }
  }
}

void LagrangeSpace::basis(double xi, double eta, std::span<double> values,
                          std::span<Vec2> ref_gradients) const {
  const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
  const Vec2 g0(-1.0, -1.0), g1(1.0, 0.0), g2(0.0, 1.0);
  if (degree_ == 1) {
    values[0] = l0;
    values[1] = l1;
    values[2] = l2;
    ref_gradients[0] = g0;
    ref_gradients[1] = g1;
    ref_gradients[2] = g2;
    return;
  }
  const double l[3] = {l0, l1, l2};
  const Vec2 g[3] = {g0, g1, g2};
  for (int a = 0; a < 3; ++a) {
    values[a] = l[a] * (2.0 * l[a] - 1.0);
    ref_gradients[a] = (4.0 * l[a] - 1.0) * g[a];
  }
  for (int e = 0; e < 3; ++e) {
    const int a = e, b = (e + 1) % 3;
    values[3 + e] = 4.0 * l[a] * l[b];
    ref_gradients[3 + e] = 4.0 * (l[a] * g[b] + l[b] * g[a]);
  }
}

FeSpace::FeSpace(int n, int velocity_degree, int pressure_degree)
    : mesh_(n), velocity_(mesh_, velocity_degree), pressure_(mesh_, pressure_degree) {}

std::string FeSpace::signature() const {
  return "n=" + std::to_string(mesh_.n()) + ";P" + std::to_string(velocity_degree()) + "/P" +
         std::to_string(pressure_degree());
}

FeSpacePtr make_space(int n, int velocity_degree, int pressure_degree) {
  return std::make_shared<const FeSpace>(n, velocity_degree, pressure_degree);
}

FeField::FeField(FeSpacePtr space, FieldKind kind)
    : space_(std::move(space)), kind_(kind) {
  coefficients_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_->size(kind_)));
}

FeField::FeField(FeSpacePtr space, FieldKind kind, Eigen::VectorXd coefficients)
    : space_(std::move(space)), kind_(kind), coefficients_(std::move(coefficients)) {
  if (static_cast<std::size_t>(coefficients_.size()) != space_->size(kind_)) {
    throw std::invalid_argument("FeField: coefficient vector has wrong length");
  }
}

PointValue FeField::evaluate(Point2 p) const {
  double xi = 0.0, eta = 0.0;
  const std::size_t t = space_->mesh().locate(p, xi, eta);
  return evaluate_local(t, xi, eta);
}

PointValue FeField::evaluate_local(std::size_t t, double xi, double eta) const {
  const LagrangeSpace& scalar =
      kind_ == FieldKind::velocity ? space_->velocity_scalar() : space_->pressure();
  std::array<double, LagrangeSpace::kMaxLocal> phi{};
  std::array<Vec2, LagrangeSpace::kMaxLocal> dphi{};
  scalar.basis(xi, eta, phi, dphi);
  const ElementGeometry geo = element_geometry(space_->mesh(), t);
  const auto& dofs = scalar.element_dofs(t);
  const Eigen::Index offset = static_cast<Eigen::Index>(scalar.size());
  const int ncomp = kind_ == FieldKind::velocity ? 2 : 1;

  PointValue out;
  for (int a = 0; a < scalar.local_size(); ++a) {
    const Vec2 grad = geo.inverse_transpose * dphi[a];
    for (int c = 0; c < ncomp; ++c) {
      const double coef = coefficients_[c * offset + dofs[a]];
      out.value[c] += coef * phi[a];
      out.gradient.row(c) += coef * grad.transpose();
    }
  }
  return out;
}

FeField interpolate(const FeSpacePtr& space, const VectorFunction& f) {
  FeField field(space, FieldKind::velocity);
  const auto& nodes = space->velocity_scalar().nodes();
  const Eigen::Index offset = static_cast<Eigen::Index>(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Vec2 v = f.value(nodes[i]);
    field.coefficients()[static_cast<Eigen::Index>(i)] = v[0];
    field.coefficients()[offset + static_cast<Eigen::Index>(i)] = v[1];
  }
  return field;
}

FeField interpolate(const FeSpacePtr& space, const ScalarFunction& f) {
  FeField field(space, FieldKind::pressure);
  const auto& nodes = space->pressure().nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    field.coefficients()[static_cast<Eigen::Index>(i)] = f.value(nodes[i]);
  return field;
}

}  // namespace sns
