#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "vu/error.hpp"
#include "vu/grid.hpp"
#include "vu/mesh.hpp"
#include "vu/volume.hpp"

namespace vu::segmentation {

/// Ordered particles on one z slice, in continuous (x, y) voxel coordinates.
struct ParticleChain {
  int z = 0;
  std::vector<Eigen::Vector2d> points;
  double spacing = 1.0;
};

struct TraceParams {
  int step_dz = 1;
  int search_radius = 3;
  double alpha_stiffness = 0.3;
  double beta_spacing = 0.1;
  int relax_iters = 3;
  double min_intensity = 0.15;
  // Gaussian blur applied to each slice before normalization. The sheet interior
  // is flat, so without it the chain has nothing pulling it to the mid-surface.
  double smooth_sigma = 2.0;

  void validate() const;
};

class LostSurface : public Error {
 public:
  LostSurface(int particle, double intensity, const std::string& what)
      : Error(what), particle_(particle), intensity_(intensity) {}
  int particle() const noexcept { return particle_; }
  double intensity() const noexcept { return intensity_; }

 private:
  int particle_;
  double intensity_;
};

/// Raised by trace_surface when a propagation step fails; carries the rows
/// that were traced before the failure.
class TraceFailed : public Error {
 public:
  TraceFailed(int rows_completed, int failed_z, const std::string& what)
      : Error(what), rows_completed_(rows_completed), failed_z_(failed_z) {}
  int rows_completed() const noexcept { return rows_completed_; }
  int failed_z() const noexcept { return failed_z_; }

 private:
  int rows_completed_;
  int failed_z_;
};

/// Smoothed slice rescaled to [0, 1] by its own min/max. A constant slice maps to 0.
FloatImage normalized_slice(const volume::VoxelGrid& grid, int z, double smooth_sigma);

/// Arc-length resampling that keeps both endpoints. The count variant places
/// exactly n points; the spacing variant picks n = round(L / spacing) + 1.
std::vector<Eigen::Vector2d> resample_count(std::span<const Eigen::Vector2d> points, int n);
std::vector<Eigen::Vector2d> resample_uniform(std::span<const Eigen::Vector2d> points, double spacing);
double polyline_length(std::span<const Eigen::Vector2d> points);

/// E = sum_i -I(p_i) + alpha |p_{i-1} - 2 p_i + p_{i+1}|^2 + beta (|p_i - p_{i+1}| - spacing)^2.
/// Points outside the slice contribute I = 0.
double chain_energy(const FloatImage& slice, std::span<const Eigen::Vector2d> points, double spacing,
                    const TraceParams& params);

ParticleChain seed_chain(const volume::VoxelGrid& grid, int z, std::span<const Eigen::Vector2d> seeds,
                         double spacing);

/// Energy after the greedy pass and after each relaxation round.
struct PropagationLog {
  std::vector<double> energies;
};

ParticleChain propagate_chain(const volume::VoxelGrid& grid, const ParticleChain& chain, const TraceParams& params,
                              PropagationLog* log = nullptr);

/// Traces from seeds on slice z0 in steps of step_dz while z stays <= z1.
/// Mesh rows are chains (in z order), columns are particles.
SurfaceMesh trace_surface(const volume::VoxelGrid& grid, std::span<const Eigen::Vector2d> seeds, double spacing,
                          int z0, int z1, const TraceParams& params);

}  // namespace vu::segmentation
