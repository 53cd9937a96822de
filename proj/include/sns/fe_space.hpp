#pragma once

#include <Eigen/Core>

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sns/torus_mesh.hpp"

namespace sns {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;  // gradient convention: G(c, d) = d v_c / d x_d

/// Smooth vector field with its Jacobian, used as exact data and as oracle.
struct VectorFunction {
  std::function<Vec2(Point2)> value;
  std::function<Mat2(Point2)> gradient;  // may be empty
};

struct ScalarFunction {
  std::function<double(Point2)> value;
  std::function<Vec2(Point2)> gradient;  // may be empty
};

/// Symmetric 7-point rule on the reference triangle, exact through degree 5.
struct QuadratureRule {
  static constexpr int kPoints = 7;
  std::array<double, kPoints> xi{};
  std::array<double, kPoints> eta{};
  std::array<double, kPoints> weight{};  // sums to 1/2 (reference area)
};

const QuadratureRule& triangle_rule_degree5();

/// Affine map of one mesh triangle onto the reference triangle.
struct ElementGeometry {
  Point2 origin;
  Mat2 jacobian;          // columns: p1 - p0, p2 - p0
  Mat2 inverse_transpose;
  double det = 0.0;

  Point2 map(double xi, double eta) const {
    return {origin.x + jacobian(0, 0) * xi + jacobian(0, 1) * eta,
            origin.y + jacobian(1, 0) * xi + jacobian(1, 1) * eta};
  }
};

ElementGeometry element_geometry(const TorusMesh& mesh, std::size_t t);

/// Continuous scalar Lagrange space of degree 1 or 2 with periodic dof maps.
class LagrangeSpace {
 public:
  static constexpr int kMaxLocal = 6;

  LagrangeSpace(const TorusMesh& mesh, int degree);

  int degree() const { return degree_; }
  int local_size() const { return degree_ == 1 ? 3 : 6; }
  std::size_t size() const { return size_; }

  /// Global dofs of triangle t, in local basis order.
  const std::array<int, kMaxLocal>& element_dofs(std::size_t t) const { return dofs_[t]; }

  /// Reference basis values and gradients at (xi, eta).
  void basis(double xi, double eta, std::span<double> values,
             std::span<Vec2> ref_gradients) const;

  /// Physical location of every dof (vertices, then edge midpoints).
  const std::vector<Point2>& nodes() const { return nodes_; }

 private:
  int degree_;
  std::size_t size_;
  std::vector<std::array<int, kMaxLocal>> dofs_;
  std::vector<Point2> nodes_;
};

enum class FieldKind { velocity, pressure };

/// Mixed space: vector Lagrange velocity of degree i, scalar Lagrange pressure
/// of degree j. Velocity coefficients are laid out component-major:
/// [u_x dofs..., u_y dofs...].
class FeSpace {
 public:
  FeSpace(int n, int velocity_degree = 2, int pressure_degree = 1);

  const TorusMesh& mesh() const { return mesh_; }
  const LagrangeSpace& velocity_scalar() const { return velocity_; }
  const LagrangeSpace& pressure() const { return pressure_; }
  int velocity_degree() const { return velocity_.degree(); }
  int pressure_degree() const { return pressure_.degree(); }

  std::size_t velocity_size() const { return 2 * velocity_.size(); }
  std::size_t pressure_size() const { return pressure_.size(); }
  std::size_t size(FieldKind kind) const {
    return kind == FieldKind::velocity ? velocity_size() : pressure_size();
  }

  /// Short textual signature, e.g. "n=32;P2/P1".
  std::string signature() const;

 private:
  TorusMesh mesh_;
  LagrangeSpace velocity_;
  LagrangeSpace pressure_;
};

using FeSpacePtr = std::shared_ptr<const FeSpace>;

FeSpacePtr make_space(int n, int velocity_degree = 2, int pressure_degree = 1);

struct PointValue {
  Vec2 value = Vec2::Zero();
  Mat2 gradient = Mat2::Zero();
};

/// Coefficient vector of a finite element function on a shared space.
class FeField {
 public:
  FeField() = default;
  FeField(FeSpacePtr space, FieldKind kind);
  FeField(FeSpacePtr space, FieldKind kind, Eigen::VectorXd coefficients);

  const FeSpacePtr& space() const { return space_; }
  FieldKind kind() const { return kind_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  Eigen::VectorXd& coefficients() { return coefficients_; }

  /// Velocity: value and Jacobian. Pressure: value(0) and gradient row 0.
  PointValue evaluate(Point2 p) const;

  /// Evaluate inside a known triangle at reference coordinates.
  PointValue evaluate_local(std::size_t t, double xi, double eta) const;

 private:
  FeSpacePtr space_;
  FieldKind kind_ = FieldKind::velocity;
  Eigen::VectorXd coefficients_;
};

/// Nodal interpolation.
FeField interpolate(const FeSpacePtr& space, const VectorFunction& f);
FeField interpolate(const FeSpacePtr& space, const ScalarFunction& f);

}  // namespace sns
