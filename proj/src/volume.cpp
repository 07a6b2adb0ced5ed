#include "vu/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vu/parallel.hpp"

namespace vu::volume {

VoxelGrid::VoxelGrid(Grid3<std::uint16_t> data, double voxel_size_um, Meta meta)
    : data_(std::move(data)), voxel_size_(voxel_size_um), meta_(std::move(meta)) {
  if (!(voxel_size_ > 0.0) || !std::isfinite(voxel_size_)) throw Error("VoxelGrid: voxel_size must be > 0");
  const Dims3& d = data_.dims();
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw Error("VoxelGrid: every dimension must be >= 1");
}

namespace {

void check_window(const IntensityWindow& w) {
  if (!(w.lo < w.hi)) {
    std::ostringstream msg;
    msg << "degenerate intensity window: lo=" << w.lo << " must be < hi=" << w.hi;
    throw Error(msg.str());
  }
}

}  // namespace

std::uint16_t quantize_value(double v, const IntensityWindow& window) {
  check_window(window);
  if (std::isnan(v)) throw Error("quantize: NaN intensity");
  const double c = std::clamp(v, window.lo, window.hi);
  // nearbyint honours the default round-to-nearest-even mode.
  const double scaled = std::nearbyint((c - window.lo) / (window.hi - window.lo) * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(scaled, 0.0, 65535.0));
}

double dequantize_value(std::uint16_t q, const IntensityWindow& window) {
  check_window(window);
  return window.lo + (window.hi - window.lo) * (static_cast<double>(q) / 65535.0);
}

VoxelGrid quantize(const FloatGrid& values, const IntensityWindow& window, double voxel_size_um, Meta meta) {
  check_window(window);
  Grid3<std::uint16_t> out(values.dims());
  const auto& src = values.data();
  auto& dst = out.data();
  const std::size_t slice = static_cast<std::size_t>(values.dims().nx) * values.dims().ny;
  parallel_for(static_cast<std::size_t>(values.dims().nz), [&](std::size_t z) {
    for (std::size_t i = z * slice; i < (z + 1) * slice; ++i) dst[i] = quantize_value(src[i], window);
  });
  return VoxelGrid(std::move(out), voxel_size_um, std::move(meta));
}

VoxelGrid merge_slabs(std::span<const Slab> slabs) {
  if (slabs.empty()) throw Error("merge_slabs: no slabs");
  const Dims3 first = slabs.front().grid.dims();
  const double voxel = slabs.front().grid.voxel_size();
  int z_end = 0;
  for (std::size_t s = 0; s < slabs.size(); ++s) {
    const auto& slab = slabs[s];
    const Dims3 d = slab.grid.dims();
    if (slab.z_offset < 0) throw Error("merge_slabs: negative z_offset");
    if (d.nx != first.nx || d.ny != first.ny) {
      std::ostringstream msg;
      msg << "merge_slabs: slab " << s << " is " << d.nx << "x" << d.ny << ", expected " << first.nx << "x"
          << first.ny;
      throw Error(msg.str());
    }
    if (slab.grid.voxel_size() != voxel) throw Error("merge_slabs: voxel_size mismatch between slabs");
    if (s > 0 && slab.z_offset < slabs[s - 1].z_offset) throw Error("merge_slabs: slabs not sorted by z_offset");
    const int prev_end = s == 0 ? 0 : slabs[s - 1].z_offset + slabs[s - 1].grid.dims().nz;
    if (slab.z_offset > prev_end) {
      std::ostringstream msg;
      msg << "merge_slabs: gap, slices " << prev_end << ".." << slab.z_offset - 1 << " are not covered";
      throw Error(msg.str());
    }
    if (s > 0 && slab.z_offset + d.nz <= prev_end) throw Error("merge_slabs: slab nested inside its predecessor");
    if (s > 1 && slab.z_offset < slabs[s - 2].z_offset + slabs[s - 2].grid.dims().nz)
      throw Error("merge_slabs: more than two slabs overlap");
    z_end = std::max(z_end, slab.z_offset + d.nz);
  }
  if (slabs.size() == 1) return slabs.front().grid;

  Grid3<std::uint16_t> out(Dims3{first.nx, first.ny, z_end});
  const std::size_t plane = static_cast<std::size_t>(first.nx) * first.ny;
  for (int z = 0; z < z_end; ++z) {
    // Slabs covering z: at most two, consecutive in the list.
    int lower = -1, upper = -1;
    for (std::size_t s = 0; s < slabs.size(); ++s) {
      const int z0 = slabs[s].z_offset;
      if (z >= z0 && z < z0 + slabs[s].grid.dims().nz) {
        if (lower < 0) lower = static_cast<int>(s); else upper = static_cast<int>(s);
      }
    }
    const auto& a = slabs[lower];
    auto* dst = out.data().data() + static_cast<std::size_t>(z) * plane;
    const auto* pa = a.grid.grid().data().data() + static_cast<std::size_t>(z - a.z_offset) * plane;
    if (upper < 0) {
      std::copy(pa, pa + plane, dst);
      continue;
    }
    const auto& b = slabs[upper];
    const auto* pb = b.grid.grid().data().data() + static_cast<std::size_t>(z - b.z_offset) * plane;
    const int overlap = a.z_offset + a.grid.dims().nz - b.z_offset;
    const double wb = static_cast<double>(z - b.z_offset + 1) / static_cast<double>(overlap + 1);
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = (1.0 - wb) * pa[i] + wb * pb[i];
      dst[i] = static_cast<std::uint16_t>(std::clamp(std::nearbyint(v), 0.0, 65535.0));
    }
  }
  return VoxelGrid(std::move(out), voxel, slabs.front().grid.meta());
}

std::optional<float> sample_trilinear(const VoxelGrid& grid, const Eigen::Vector3d& p) {
  const Dims3& d = grid.dims();
  if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.z() >= 0.0 && p.x() <= d.nx - 1 && p.y() <= d.ny - 1 &&
        p.z() <= d.nz - 1))
    return std::nullopt;
  const int x0 = std::min(static_cast<int>(p.x()), std::max(d.nx - 2, 0));
  const int y0 = std::min(static_cast<int>(p.y()), std::max(d.ny - 2, 0));
  const int z0 = std::min(static_cast<int>(p.z()), std::max(d.nz - 2, 0));
  const double fx = p.x() - x0, fy = p.y() - y0, fz = p.z() - z0;
  const int x1 = std::min(x0 + 1, d.nx - 1), y1 = std::min(y0 + 1, d.ny - 1), z1 = std::min(z0 + 1, d.nz - 1);
  const auto& g = grid.grid();
  const double c00 = g.at(x0, y0, z0) * (1 - fx) + g.at(x1, y0, z0) * fx;
  const double c10 = g.at(x0, y1, z0) * (1 - fx) + g.at(x1, y1, z0) * fx;
  const double c01 = g.at(x0, y0, z1) * (1 - fx) + g.at(x1, y0, z1) * fx;
  const double c11 = g.at(x0, y1, z1) * (1 - fx) + g.at(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

OrientedPatch extract_oriented_patch(const VoxelGrid& grid, const Eigen::Vector3d& center,
                                     const Eigen::Matrix3d& basis, PatchShape shape, double spacing) {
  if (shape.w < 1 || shape.h < 1 || shape.d < 1) throw Error("extract_oriented_patch: empty patch shape");
  const Eigen::Matrix3d gram = basis.transpose() * basis;
  if (!basis.allFinite() || (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw Error("extract_oriented_patch: basis is not orthonormal");

  OrientedPatch patch{shape, std::vector<float>(shape.count(), 0.0f), std::vector<std::uint8_t>(shape.count(), 0)};
  std::size_t idx = 0;
  for (int k = 0; k < shape.d; ++k) {
    for (int j = 0; j < shape.h; ++j) {
      for (int i = 0; i < shape.w; ++i, ++idx) {
        const Eigen::Vector3d local((i - shape.w / 2) * spacing, (j - shape.h / 2) * spacing,
                                    (k - shape.d / 2) * spacing);
        if (auto v = sample_trilinear(grid, center + basis * local)) {
          patch.values[idx] = *v;
          patch.valid[idx] = 1;
        }
      }
    }
  }
  return patch;
}

}  // namespace vu::volume
