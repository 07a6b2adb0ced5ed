#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vu/grid.hpp"

namespace vu::volume {

using Meta = std::map<std::string, std::string>;

/// Reconstructed CT volume: 16-bit intensities with an isotropic voxel edge in micrometers.
/// Immutable once built, so it can be shared across threads freely.
class VoxelGrid {
 public:
  VoxelGrid(Grid3<std::uint16_t> data, double voxel_size_um, Meta meta = {});

  const Dims3& dims() const noexcept { return data_.dims(); }
  double voxel_size() const noexcept { return voxel_size_; }
  const Meta& meta() const noexcept { return meta_; }
  const Grid3<std::uint16_t>& grid() const noexcept { return data_; }
  std::uint16_t at(int x, int y, int z) const { return data_.at(x, y, z); }

  bool operator==(const VoxelGrid&) const = default;

 private:
  Grid3<std::uint16_t> data_;
  double voxel_size_;
  Meta meta_;
};

struct IntensityWindow {
  double lo = 0.0;
  double hi = 1.0;
};

/// Independently reconstructed section of a taller volume.
struct Slab {
  VoxelGrid grid;
  int z_offset = 0;
};

std::uint16_t quantize_value(double v, const IntensityWindow& window);
double dequantize_value(std::uint16_t q, const IntensityWindow& window);

/// Maps floats onto the full 16-bit range through `window`, clamping outside it
/// and rounding half-to-even.
VoxelGrid quantize(const FloatGrid& values, const IntensityWindow& window, double voxel_size_um = 1.0,
                   Meta meta = {});

/// Stacks slabs into one volume. Overlapping slices are cross-faded with a
/// linear ramp whose upper-slab weight goes (j+1)/(n+1) across an n-slice overlap.
VoxelGrid merge_slabs(std::span<const Slab> slabs);

/// Trilinear interpolation at a continuous voxel-space point. Returns nullopt
/// when p lies outside [0, dim-1] on any axis.
std::optional<float> sample_trilinear(const VoxelGrid& grid, const Eigen::Vector3d& p);

struct PatchShape {
  int w = 1;
  int h = 1;
  int d = 1;
  std::size_t count() const noexcept { return static_cast<std::size_t>(w) * h * d; }
  bool operator==(const PatchShape&) const = default;
};

/// Resampled 3D neighbourhood; value index is (k * h + j) * w + i.
struct OrientedPatch {
  PatchShape shape;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  float at(int i, int j, int k) const { return values[(static_cast<std::size_t>(k) * shape.h + j) * shape.w + i]; }
};

/// Samples grid on the lattice center + basis * ((i - w/2) s, (j - h/2) s, (k - d/2) s).
/// The basis columns are the patch axes and must be orthonormal. Samples that
/// fall outside the grid are zero and marked invalid.
OrientedPatch extract_oriented_patch(const VoxelGrid& grid, const Eigen::Vector3d& center,
                                     const Eigen::Matrix3d& basis, PatchShape shape, double spacing);

}  // namespace vu::volume
