#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <vector>

namespace sns {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct MeshStatistics {
  double h = 0.0;
  double total_area = 0.0;
  double quasi_uniformity = 0.0;  // longest edge / smallest inscribed diameter
};

/// Uniform periodic triangulation of [-pi, pi)^2.
///
/// Vertex (i, j) has index i + n*j and sits at (-pi + i*H, -pi + j*H) with
/// H = 2*pi/n. Every grid square is cut along its (i,j)-(i+1,j+1) diagonal.
/// Each square owns three edges: horizontal, vertical, diagonal. All
/// identifications are modular index arithmetic, so the mesh is exactly
/// periodic for every n >= 1 (n = 1 gives one vertex, three edges and two
/// triangles).
///
/// Triangle geometry is stored unwrapped: `corner(t, a)` returns coordinates
/// that may lie on the far side of the periodic seam so that every element is
/// a genuine, positively oriented triangle.
class TorusMesh {
 public:
  explicit TorusMesh(int n);

  int n() const { return n_; }
  double cell_size() const { return kTwoPi / n_; }
  double h() const;

  std::size_t num_vertices() const { return static_cast<std::size_t>(n_) * n_; }
  std::size_t num_edges() const { return 3 * num_vertices(); }
  std::size_t num_triangles() const { return 2 * num_vertices(); }

  const std::vector<Point2>& vertices() const { return vertices_; }
  const std::array<int, 3>& triangle(std::size_t t) const { return triangles_[t]; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }

  /// Global edge ids of the local edges (0,1), (1,2), (2,0) of triangle t.
  const std::array<int, 3>& triangle_edges(std::size_t t) const { return triangle_edges_[t]; }

  /// Unwrapped coordinates of local corner a of triangle t.
  Point2 corner(std::size_t t, int a) const;

  double signed_area(std::size_t t) const;

  int vertex_index(int i, int j) const { return wrap(i) + n_ * wrap(j); }
  int wrap(int i) const { return ((i % n_) + n_) % n_; }

  /// Triangle containing the point (after periodic reduction) and the
  /// barycentric-style reference coordinates (xi, eta) inside it.
  std::size_t locate(Point2 p, double& xi, double& eta) const;

  /// Plain-text node/element listing, for debugging only.
  void write_text(std::ostream& os) const;

 private:
  int n_;
  std::vector<Point2> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<std::array<int, 3>> triangle_edges_;
};

TorusMesh build_uniform_mesh(int n);

MeshStatistics mesh_statistics(const TorusMesh& mesh);

/// Reduce a coordinate into [-pi, pi).
double wrap_coordinate(double x);

}  // namespace sns
