#include "sns/torus_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace sns {

namespace {

// Corner offsets (in grid units) of the two triangles in square (i, j).
constexpr int kLower[3][2] = {{0, 0}, {1, 0}, {1, 1}};
constexpr int kUpper[3][2] = {{0, 0}, {1, 1}, {0, 1}};

enum EdgeKind { kHorizontal = 0, kVertical = 1, kDiagonal = 2 };

}  // namespace

double wrap_coordinate(double x) {
  double r = std::fmod(x + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r - kPi;
}

TorusMesh::TorusMesh(int n) : n_(n) {
  if (n < 1) {
    throw std::invalid_argument("TorusMesh: subdivisions per axis must be >= 1, got " +
                                std::to_string(n));
  }
  const double H = cell_size();
  vertices_.reserve(num_vertices());
  for (int j = 0; j < n_; ++j)
    for (int i = 0; i < n_; ++i) vertices_.push_back({-kPi + i * H, -kPi + j * H});

  auto edge = [this](int i, int j, EdgeKind kind) { return 3 * vertex_index(i, j) + kind; };

  triangles_.reserve(num_triangles());
  triangle_edges_.reserve(num_triangles());
  for (int j = 0; j < n_; ++j) {
    for (int i = 0; i < n_; ++i) {
      // lower: (i,j) (i+1,j) (i+1,j+1)
      triangles_.push_back({vertex_index(i, j), vertex_index(i + 1, j), vertex_index(i + 1, j + 1)});
      triangle_edges_.push_back(
          {edge(i, j, kHorizontal), edge(i + 1, j, kVertical), edge(i, j, kDiagonal)});
      // upper: (i,j) (i+1,j+1) (i,j+1)
      triangles_.push_back({vertex_index(i, j), vertex_index(i + 1, j + 1), vertex_index(i, j + 1)});
      triangle_edges_.push_back(
          {edge(i, j, kDiagonal), edge(i, j + 1, kHorizontal), edge(i, j, kVertical)});
    }
  }
}

double TorusMesh::h() const { return std::sqrt(2.0) * cell_size(); }

Point2 TorusMesh::corner(std::size_t t, int a) const {
  const std::size_t square = t / 2;
  const int i = static_cast<int>(square % n_);
  const int j = static_cast<int>(square / n_);
  const auto& off = (t % 2 == 0) ? kLower[a] : kUpper[a];
  const double H = cell_size();
  return {-kPi + (i + off[0]) * H, -kPi + (j + off[1]) * H};
}

double TorusMesh::signed_area(std::size_t t) const {
  const Point2 a = corner(t, 0), b = corner(t, 1), c = corner(t, 2);
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

std::size_t TorusMesh::locate(Point2 p, double& xi, double& eta) const {
  const double H = cell_size();
  const double sx = (wrap_coordinate(p.x) + kPi) / H;
  const double sy = (wrap_coordinate(p.y) + kPi) / H;
  const int i = std::clamp(static_cast<int>(std::floor(sx)), 0, n_ - 1);
  const int j = std::clamp(static_cast<int>(std::floor(sy)), 0, n_ - 1);
  const double fx = sx - i;
  const double fy = sy - j;
  const std::size_t square = static_cast<std::size_t>(i + n_ * j);
  // Reference map of the lower triangle: x = x0 + H(xi + eta), y = y0 + H eta.
  // Upper triangle: x = x0 + H xi, y = y0 + H(xi + eta).
  if (fy <= fx) {
    eta = fy;
    xi = fx - fy;
    return 2 * square;
  }
  xi = fx;
  eta = fy - fx;
  return 2 * square + 1;
}

void TorusMesh::write_text(std::ostream& os) const {
  os << "# torus mesh n=" << n_ << " h=" << h() << "\n";
  os << "vertices " << vertices_.size() << "\n";
  for (std::size_t v = 0; v < vertices_.size(); ++v)
    os << v << ' ' << vertices_[v].x << ' ' << vertices_[v].y << "\n";
  os << "triangles " << triangles_.size() << "\n";
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    os << t << ' ' << tri[0] << ' ' << tri[1] << ' ' << tri[2] << "\n";
  }
}

TorusMesh build_uniform_mesh(int n) { return TorusMesh(n); }

MeshStatistics mesh_statistics(const TorusMesh& mesh) {
  MeshStatistics stats;
  double longest = 0.0;
  double smallest_inscribed = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    stats.total_area += area;
    double perimeter = 0.0;
    for (int a = 0; a < 3; ++a) {
      const Point2 p = mesh.corner(t, a), q = mesh.corner(t, (a + 1) % 3);
      const double len = std::hypot(q.x - p.x, q.y - p.y);
      longest = std::max(longest, len);
      perimeter += len;
    }
    smallest_inscribed = std::min(smallest_inscribed, 4.0 * area / perimeter);
  }
  stats.h = longest;
  stats.quasi_uniformity = longest / smallest_inscribed;
  return stats;
}

}  // namespace sns
