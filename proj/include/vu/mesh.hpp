#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace vu {

/// Triangulated grid surface: rows x cols vertices stored row-major, two
/// triangles per grid cell. `uv` is empty until the mesh is flattened.
struct SurfaceMesh {
  int rows = 0;
  int cols = 0;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Eigen::Vector2d> uv;

  int vertex(int r, int c) const noexcept { return r * cols + c; }
  bool has_uv() const noexcept { return !uv.empty() && uv.size() == vertices.size(); }
};

/// Builds the standard strip triangulation for a rows x cols vertex grid:
/// cell (r, c) becomes (a, b, d) and (a, d, e) with a=(r,c), b=(r,c+1), d=(r+1,c+1), e=(r+1,c).
SurfaceMesh make_grid_mesh(int rows, int cols, const std::function<Eigen::Vector3d(int r, int c)>& position);

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c);
double signed_area_2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c);

/// Throws vu::Error if the grid structure is inconsistent or any triangle has (near) zero area.
void validate_mesh(const SurfaceMesh& mesh, double min_area = 1e-12);

/// Euler characteristic V - E + F.
int euler_characteristic(const SurfaceMesh& mesh);

/// Area-weighted vertex normals, normalized.
std::vector<Eigen::Vector3d> vertex_normals(const SurfaceMesh& mesh);

/// Closest point on triangle abc to p, returned as barycentric weights (wa, wb, wc).
Eigen::Vector3d closest_point_barycentric(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c);

/// OBJ with v / vt / f records; the grid shape is kept in a "# grid rows cols" comment.
void write_obj(const std::filesystem::path& path, const SurfaceMesh& mesh);
SurfaceMesh read_obj(const std::filesystem::path& path);

}  // namespace vu
