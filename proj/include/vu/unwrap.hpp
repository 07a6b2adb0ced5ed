#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vu/grid.hpp"
#include "vu/mesh.hpp"
#include "vu/volume.hpp"

namespace vu::unwrap {

struct Distortion {
  std::vector<double> area_ratio;       // UV area / 3D area per triangle
  std::vector<double> angle_deviation;  // max corner angle error per triangle, radians
  double max_area_deviation() const;    // max |ratio - 1|
  double max_angle_deviation() const;
};

struct FlattenedMesh {
  SurfaceMesh base;        // uv filled, in voxel-length units
  double uv_scale = 1.0;   // micrometers per UV unit
  Distortion distortion;
};

/// Least-squares conformal map with the two most distant boundary vertices
/// pinned, rescaled so UV triangle area matches 3D area on average. For grid
/// meshes the chart is then turned so columns run along +u and rows along +v.
FlattenedMesh flatten_mesh(const SurfaceMesh& mesh, double voxel_size_um = 1.0);

/// Triangles whose UV orientation disagrees with the majority.
int count_flipped(const SurfaceMesh& mesh);

/// Pixel (i, j) of the flattened raster sits at uv = origin + (i, j) / px_per_voxel.
struct UvRaster {
  int width = 0;
  int height = 0;
  double px_per_voxel = 1.0;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  std::vector<int> triangle;             // -1 where no triangle covers the pixel
  std::vector<Eigen::Vector3d> weights;  // barycentric weights in that triangle

  Eigen::Vector2d pixel_to_uv(double i, double j) const { return origin + Eigen::Vector2d(i, j) / px_per_voxel; }
  Eigen::Vector2d uv_to_pixel(const Eigen::Vector2d& uv) const { return (uv - origin) * px_per_voxel; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * width + i; }
};

UvRaster rasterize(const FlattenedMesh& fmesh, double px_per_voxel);

/// 3D point (and interpolated unit normal) under raster pixel (i, j); false if uncovered.
bool pixel_to_surface(const FlattenedMesh& fmesh, const std::vector<Eigen::Vector3d>& normals, const UvRaster& raster,
                      int i, int j, Eigen::Vector3d& point, Eigen::Vector3d& normal);

struct SurfaceVolume {
  int width = 0;
  int height = 0;
  int depth = 1;
  double step = 1.0;
  double px_per_voxel = 1.0;
  double uv_scale = 1.0;
  std::vector<float> data;           // index (k * height + j) * width + i
  std::vector<std::uint8_t> valid;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * height + j) * width + i;
  }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }
  bool is_valid(int i, int j, int k) const { return valid[index(i, j, k)] != 0; }
  /// Normal offset of channel k in voxels.
  double offset(int k) const { return (k - depth / 2) * step; }
  bool operator==(const SurfaceVolume&) const = default;
};

/// Channel k is sampled at position + (k - D/2) * step * normal for every
/// raster pixel. Samples outside the volume are 0 and invalid.
SurfaceVolume sample_surface_volume(const volume::VoxelGrid& grid, const FlattenedMesh& fmesh, int depth,
                                    double step, double px_per_voxel = 1.0);

enum class Reduction { max, mean };
Reduction parse_reduction(const std::string& s);
std::string to_string(Reduction r);

struct TextureImage {
  FloatImage image;
  Mask flagged;        // 1 where every reduced sample was invalid
  std::string source;  // e.g. "max/3"
  double lo = 0.0;     // normalization window applied
  double hi = 0.0;
};

TextureImage texture_image(const SurfaceVolume& sv, Reduction reduction, int half_width);

/// clamp(texture - prediction, 0, 1).
FloatImage composite(const TextureImage& texture, const FloatImage& prediction);

/// D 16-bit slices quantized with the data min/max, one validity PNG per
/// channel, and meta.json.
void save_surface_volume(const std::filesystem::path& dir, const SurfaceVolume& sv);
SurfaceVolume load_surface_volume(const std::filesystem::path& dir);

}  // namespace vu::unwrap
