#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vu/affine.hpp"
#include "vu/config.hpp"
#include "vu/glyphs.hpp"
#include "vu/grid.hpp"
#include "vu/mesh.hpp"
#include "vu/volume.hpp"

namespace vu::phantom {

enum class Kind { scroll, fragment };
enum class InkMode { intensity, morphology };

/// Parameters of a synthetic scroll or fragment. Lengths are micrometers unless noted.
///
/// Fiber texture statistics (fiber_period, fiber_amplitude) are free parameters;
/// nothing about real papyrus is implied by the defaults.
struct PhantomSpec {
  Kind kind = Kind::fragment;
  int wraps = 5;                   // scroll only
  double spiral_pitch = 100.0;     // radial advance per turn
  double sheet_thickness = 60.0;
  double fiber_period = 32.0;
  double fiber_amplitude = 0.2;    // relative modulation of the papyrus base intensity
  std::string ink_text = "HE|RC";  // '|' separates text lines
  std::string hidden_text;         // layer 1 text (fragments); empty means ink_text reversed
  InkMode ink_mode = InkMode::morphology;
  double ink_strength = 0.08;      // added intensity, full scale = 1 (intensity mode)
  double ink_thickness = 16.0;
  double noise_sigma = 0.02;       // full scale = 1
  int layer_count = 2;             // fragment only
  double warp_amplitude = 16.0;    // fragment only
  double layer_gap = 60.0;         // air between fragment layers
  double core_radius = 80.0;       // scroll only: radius where the spiral starts
  int extent_x = 256;              // fragment width, voxels
  int extent_z = 160;              // slices
  int glyph_scale = 5;             // pixels per glyph dot
  double voxel_size = 4.0;
  std::uint64_t seed = 1;

  void validate() const;
};

PhantomSpec spec_from_config(const config::KeyValues& kv, const std::string& prefix = "phantom");
config::KeyValues spec_to_config(const PhantomSpec& spec, const std::string& prefix = "phantom");

/// Per writing layer: the analytic center surface (with its UV chart in
/// pixels) and the binary ink image on that chart.
struct LayerTruth {
  SurfaceMesh true_mesh;
  Mask ink_mask;
};

/// Intensity bookkeeping over the ink-depth band of inked layers, before quantization.
struct InkStats {
  std::size_t ink_voxels = 0;
  std::size_t surface_voxels = 0;  // non-ink voxels of the same band
  double ink_mean = 0.0;
  double surface_mean = 0.0;
};

struct GroundTruth {
  std::vector<LayerTruth> layers;
  /// 0 = no ink, otherwise 1 + index of the layer whose ink touched the voxel.
  Grid3<std::uint8_t> voxel_ink;
  InkStats stats;
  PhantomSpec provenance;
};

/// Infrared-style photograph of layer 0 (dark = ink), in a frame offset from
/// the UV chart by `applied_transform` (UV -> photo).
struct SurfacePhoto {
  FloatImage image;
  Affine2D applied_transform;
};

struct FragmentPhantom {
  volume::VoxelGrid volume;
  GroundTruth truth;
  SurfacePhoto photo;
};

struct ScrollPhantom {
  volume::VoxelGrid volume;
  GroundTruth truth;
};

/// Text laid out on a UV raster: lines ('|'-separated) are centered in equal
/// horizontal bands with glyph cells of (6s, 8s) pixels.
Mask layout_text(const std::string& text, int width, int height, int glyph_scale);

/// Ink contrast image of a layer in its own UV frame: 0.15 on ink, 0.85 elsewhere.
FloatImage ink_contrast_image(const Mask& ink_mask);

FragmentPhantom generate_fragment(const PhantomSpec& spec);
ScrollPhantom generate_scroll(const PhantomSpec& spec);

/// Analytic center of fragment layer `layer` at column (x, z), in voxels.
double fragment_layer_center(const PhantomSpec& spec, int layer, double x, double z);
int fragment_height(const PhantomSpec& spec);

/// Archimedean spiral helpers for scroll phantoms, voxel units.
struct SpiralGeometry {
  double center = 0.0;  // axis position (x and y)
  double r0 = 0.0;      // radius at theta = 0
  double b = 0.0;       // radius gained per radian
  double theta_max = 0.0;
  int size = 0;         // nx = ny

  double radius(double theta) const { return r0 + b * theta; }
  double arc_length(double theta) const;
};
SpiralGeometry spiral_geometry(const PhantomSpec& spec);

/// Number of ink-mask pixels that have no ink voxel within one voxel of the
/// place their layer chart puts them. Zero for a consistent phantom.
std::size_t count_ink_inconsistencies(const PhantomSpec& spec, const GroundTruth& truth);

/// Writes <dir>/volume (slice stack) and <dir>/ground_truth (layer masks, meshes,
/// photo, transform) plus <dir>/phantom.cfg.
void save_fragment(const std::filesystem::path& dir, const FragmentPhantom& phantom);
void save_scroll(const std::filesystem::path& dir, const ScrollPhantom& phantom);

void write_affine(const std::filesystem::path& path, const Affine2D& t);
Affine2D read_affine(const std::filesystem::path& path);

}  // namespace vu::phantom
