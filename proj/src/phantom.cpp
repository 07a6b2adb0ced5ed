#include "vu/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "vu/io.hpp"
#include "vu/parallel.hpp"

namespace vu::phantom {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPapyrusBase = 0.55;
constexpr double kAirMargin = 12.0;          // voxels of air around the object
constexpr double kMorphologyResidual = 0.05;  // fiber modulation left under ink
constexpr float kInkContrast = 0.15f;
constexpr float kPapyrusContrast = 0.85f;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

enum Stream : std::uint64_t { kWarpStream = 1, kNoiseStream = 2, kPhotoStream = 3 };

double fiber_pattern(double u, double v, double period) {
  return 0.5 * (std::sin(kTwoPi * u / period) + std::sin(kTwoPi * v / period));
}

std::string reversed_text(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '|') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  lines.push_back(cur);
  std::string out;
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    if (it != lines.rbegin()) out += '|';
    out.append(it->rbegin(), it->rend());
  }
  return out;
}

bool mask_at(const Mask& mask, double u, double v) {
  const int iu = static_cast<int>(std::lround(u)), iv = static_cast<int>(std::lround(v));
  return mask.contains(iu, iv) && mask.at(iu, iv) != 0;
}

/// Noise-free field plus labelling shared by both generators.
struct RawPhantom {
  FloatGrid values;
  Grid3<std::uint8_t> band;  // 0 = elsewhere, 1 = ink-depth band without ink, 2 = ink
  Grid3<std::uint8_t> voxel_ink;
};

/// Applies ink, noise and quantization in place; fills stats.
volume::VoxelGrid finish(RawPhantom& raw, const PhantomSpec& spec, InkStats& stats) {
  const Dims3 d = raw.values.dims();
  const std::size_t plane = static_cast<std::size_t>(d.nx) * d.ny;
  const auto nz = static_cast<std::size_t>(d.nz);

  // Mean of the noise-free band outside ink, accumulated in slice order.
  std::vector<double> sums(nz, 0.0);
  std::vector<std::size_t> counts(nz, 0);
  parallel_for(nz, [&](std::size_t z) {
    for (std::size_t i = z * plane; i < (z + 1) * plane; ++i) {
      if (raw.band.data()[i] == 1) {
        sums[z] += raw.values.data()[i];
        ++counts[z];
      }
    }
  });
  double band_sum = 0.0;
  std::size_t band_count = 0;
  for (std::size_t z = 0; z < nz; ++z) {
    band_sum += sums[z];
    band_count += counts[z];
  }
  const double band_mean = band_count ? band_sum / static_cast<double>(band_count) : kPapyrusBase;

  std::vector<double> ink_sum(nz, 0.0), surf_sum(nz, 0.0);
  std::vector<std::size_t> ink_n(nz, 0), surf_n(nz, 0);
  parallel_for(nz, [&](std::size_t z) {
    auto rng = stream_rng(spec.seed, kNoiseStream, z);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = z * plane; i < (z + 1) * plane; ++i) {
      double v = raw.values.data()[i];
      const std::uint8_t b = raw.band.data()[i];
      if (b == 2) {
        if (spec.ink_mode == InkMode::intensity)
          v += spec.ink_strength;
        else
          v = band_mean + kMorphologyResidual * (v - band_mean);
      }
      // Draw for every voxel so the sequence is independent of the geometry.
      const double n = noise(rng);
      if (spec.noise_sigma > 0) v += spec.noise_sigma * n;
      raw.values.data()[i] = static_cast<float>(v);
      if (b == 2) {
        ink_sum[z] += v;
        ++ink_n[z];
      } else if (b == 1) {
        surf_sum[z] += v;
        ++surf_n[z];
      }
    }
  });
  double is = 0, ss = 0;
  stats = {};
  for (std::size_t z = 0; z < nz; ++z) {
    is += ink_sum[z];
    ss += surf_sum[z];
    stats.ink_voxels += ink_n[z];
    stats.surface_voxels += surf_n[z];
  }
  stats.ink_mean = stats.ink_voxels ? is / static_cast<double>(stats.ink_voxels) : 0.0;
  stats.surface_mean = stats.surface_voxels ? ss / static_cast<double>(stats.surface_voxels) : 0.0;

  std::ostringstream seed;
  seed << spec.seed;
  volume::Meta meta{{"source", spec.kind == Kind::fragment ? "phantom:fragment" : "phantom:scroll"},
                    {"seed", seed.str()},
                    {"energy", "synthetic"}};
  return volume::quantize(raw.values, {0.0, 1.0}, spec.voxel_size, std::move(meta));
}

struct FragmentGeometry {
  double t, gap, amp, ink, period;
  int nx, ny, nz;
  std::vector<double> phase_x, phase_z;
};

FragmentGeometry fragment_geometry(const PhantomSpec& spec) {
  FragmentGeometry g;
  g.t = spec.sheet_thickness / spec.voxel_size;
  g.gap = spec.layer_gap / spec.voxel_size;
  g.amp = spec.warp_amplitude / spec.voxel_size;
  g.ink = spec.ink_thickness / spec.voxel_size;
  g.period = spec.fiber_period / spec.voxel_size;
  g.nx = spec.extent_x;
  g.nz = spec.extent_z;
  const double top = kAirMargin + g.amp + g.t / 2 + (spec.layer_count - 1) * (g.t + g.gap);
  g.ny = static_cast<int>(std::ceil(top + g.t / 2 + g.amp + kAirMargin)) + 1;
  auto rng = stream_rng(spec.seed, kWarpStream, 0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (int l = 0; l < spec.layer_count; ++l) {
    g.phase_x.push_back(phase(rng));
    g.phase_z.push_back(phase(rng));
  }
  return g;
}

struct CenterSample {
  double c, cx, cz;
};

CenterSample layer_center(const FragmentGeometry& g, int layer, double x, double z) {
  const double kx = kTwoPi / (2.0 * g.nx), kz = kTwoPi / (2.0 * g.nz);
  const double y0 = kAirMargin + g.amp + g.t / 2 + layer * (g.t + g.gap);
  const double sx = std::sin(kx * x + g.phase_x[layer]), cxv = std::cos(kx * x + g.phase_x[layer]);
  const double sz = std::sin(kz * z + g.phase_z[layer]), czv = std::cos(kz * z + g.phase_z[layer]);
  return {y0 + g.amp * sx * sz, g.amp * kx * cxv * sz, g.amp * sx * kz * czv};
}

FloatImage make_photo(const Mask& ink, const Affine2D& uv_to_photo) {
  const FloatImage contrast = ink_contrast_image(ink);
  const Affine2D photo_to_uv = uv_to_photo.inverse();
  FloatImage photo(ink.width(), ink.height(), kPapyrusContrast);
  for (int y = 0; y < photo.height(); ++y) {
    for (int x = 0; x < photo.width(); ++x) {
      const Eigen::Vector2d uv = photo_to_uv.apply({x, y});
      if (auto v = sample_bilinear(contrast, uv.x(), uv.y())) photo.at(x, y) = *v;
    }
  }
  return photo;
}

double newton_theta_for_arc(const SpiralGeometry& s, double u) {
  double theta = u / std::max(s.r0, 1e-9);
  theta = std::min(theta, s.theta_max);
  for (int it = 0; it < 60; ++it) {
    const double r = s.radius(theta);
    const double f = s.arc_length(theta) - u;
    const double df = std::sqrt(r * r + s.b * s.b);
    const double step = f / df;
    theta -= step;
    if (std::abs(step) < 1e-13) break;
  }
  return theta;
}

}  // namespace

void PhantomSpec::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string("phantom.") + name, "must be > 0");
  };
  positive(spiral_pitch, "spiral_pitch");
  positive(sheet_thickness, "sheet_thickness");
  positive(fiber_period, "fiber_period");
  positive(ink_thickness, "ink_thickness");
  positive(voxel_size, "voxel_size");
  positive(layer_gap, "layer_gap");
  positive(core_radius, "core_radius");
  if (fiber_amplitude < 0) throw ConfigError("phantom.fiber_amplitude", "must be >= 0");
  if (noise_sigma < 0) throw ConfigError("phantom.noise_sigma", "must be >= 0");
  if (warp_amplitude < 0) throw ConfigError("phantom.warp_amplitude", "must be >= 0");
  if (extent_x < 8 || extent_z < 2) throw ConfigError("phantom.extent_x", "fragment extent too small");
  if (glyph_scale < 1) throw ConfigError("phantom.glyph_scale", "must be >= 1");
  if (kind == Kind::scroll && wraps < 1) throw ConfigError("phantom.wraps", "must be >= 1");
  if (kind == Kind::fragment && layer_count < 1) throw ConfigError("phantom.layer_count", "must be >= 1");
  for (char c : ink_text + hidden_text)
    if (c != '|' && !glyph_supported(c))
      throw ConfigError("phantom.ink_text", std::string("unsupported character '") + c + "'");
}

PhantomSpec spec_from_config(const config::KeyValues& kv, const std::string& prefix) {
  const config::Section s(kv, prefix);
  PhantomSpec p;
  const std::string kind = s.get_string("kind", "fragment");
  if (kind == "fragment") p.kind = Kind::fragment;
  else if (kind == "scroll") p.kind = Kind::scroll;
  else throw ConfigError(s.key("kind"), "expected fragment or scroll");
  const std::string mode = s.get_string("ink_mode", "morphology");
  if (mode == "morphology") p.ink_mode = InkMode::morphology;
  else if (mode == "intensity") p.ink_mode = InkMode::intensity;
  else throw ConfigError(s.key("ink_mode"), "expected intensity or morphology");
  p.wraps = static_cast<int>(s.get_int("wraps", p.wraps));
  p.spiral_pitch = s.get_double("spiral_pitch", p.spiral_pitch);
  p.sheet_thickness = s.get_double("sheet_thickness", p.sheet_thickness);
  p.fiber_period = s.get_double("fiber_period", p.fiber_period);
  p.fiber_amplitude = s.get_double("fiber_amplitude", p.fiber_amplitude);
  p.ink_text = s.get_string("ink_text", p.ink_text);
  p.hidden_text = s.get_string("hidden_text", p.hidden_text);
  p.ink_strength = s.get_double("ink_strength", p.ink_strength);
  p.ink_thickness = s.get_double("ink_thickness", p.ink_thickness);
  p.noise_sigma = s.get_double("noise_sigma", p.noise_sigma);
  p.layer_count = static_cast<int>(s.get_int("layer_count", p.layer_count));
  p.warp_amplitude = s.get_double("warp_amplitude", p.warp_amplitude);
  p.layer_gap = s.get_double("layer_gap", p.layer_gap);
  p.core_radius = s.get_double("core_radius", p.core_radius);
  p.extent_x = static_cast<int>(s.get_int("extent_x", p.extent_x));
  p.extent_z = static_cast<int>(s.get_int("extent_z", p.extent_z));
  p.glyph_scale = static_cast<int>(s.get_int("glyph_scale", p.glyph_scale));
  p.voxel_size = s.get_double("voxel_size", p.voxel_size);
  p.seed = s.get_u64("seed", p.seed);
  p.validate();
  return p;
}

config::KeyValues spec_to_config(const PhantomSpec& p, const std::string& prefix) {
  config::KeyValues kv;
  auto put = [&](const std::string& k, const auto& v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    kv[prefix.empty() ? k : prefix + "." + k] = ss.str();
  };
  put("kind", p.kind == Kind::fragment ? "fragment" : "scroll");
  put("ink_mode", p.ink_mode == InkMode::morphology ? "morphology" : "intensity");
  put("wraps", p.wraps);
  put("spiral_pitch", p.spiral_pitch);
  put("sheet_thickness", p.sheet_thickness);
  put("fiber_period", p.fiber_period);
  put("fiber_amplitude", p.fiber_amplitude);
  put("ink_text", p.ink_text);
  put("hidden_text", p.hidden_text);
  put("ink_strength", p.ink_strength);
  put("ink_thickness", p.ink_thickness);
  put("noise_sigma", p.noise_sigma);
  put("layer_count", p.layer_count);
  put("warp_amplitude", p.warp_amplitude);
  put("layer_gap", p.layer_gap);
  put("core_radius", p.core_radius);
  put("extent_x", p.extent_x);
  put("extent_z", p.extent_z);
  put("glyph_scale", p.glyph_scale);
  put("voxel_size", p.voxel_size);
  put("seed", p.seed);
  return kv;
}

Mask layout_text(const std::string& text, int width, int height, int glyph_scale) {
  Mask out(width, height, 0);
  if (text.empty()) return out;
  std::vector<std::string> lines(1);
  for (char c : text) {
    if (c == '|') lines.emplace_back();
    else lines.back() += c;
  }
  const int cw = 6 * glyph_scale, ch = 8 * glyph_scale;
  const int band = height / static_cast<int>(lines.size());
  if (band < ch) throw Error("layout_text: " + std::to_string(lines.size()) + " text lines do not fit the raster height");
  for (std::size_t l = 0; l < lines.size(); ++l) {
    if (lines[l].empty()) continue;
    const Mask line = render_glyph_mask(lines[l], {cw, ch}, glyph_scale);
    if (line.width() > width) throw Error("layout_text: line '" + lines[l] + "' is wider than the raster");
    const int x0 = (width - line.width()) / 2;
    const int y0 = static_cast<int>(l) * band + (band - ch) / 2;
    for (int y = 0; y < line.height(); ++y)
      for (int x = 0; x < line.width(); ++x)
        if (line.at(x, y)) out.at(x0 + x, y0 + y) = 1;
  }
  return out;
}

FloatImage ink_contrast_image(const Mask& ink_mask) {
  FloatImage img(ink_mask.width(), ink_mask.height());
  std::transform(ink_mask.data().begin(), ink_mask.data().end(), img.data().begin(),
                 [](std::uint8_t v) { return v ? kInkContrast : kPapyrusContrast; });
  return img;
}

int fragment_height(const PhantomSpec& spec) { return fragment_geometry(spec).ny; }

double fragment_layer_center(const PhantomSpec& spec, int layer, double x, double z) {
  const auto g = fragment_geometry(spec);
  if (layer < 0 || layer >= spec.layer_count) throw Error("fragment_layer_center: no such layer");
  return layer_center(g, layer, x, z).c;
}

FragmentPhantom generate_fragment(const PhantomSpec& spec) {
  spec.validate();
  if (spec.kind != Kind::fragment) throw Error("generate_fragment: spec.kind must be fragment");
  const FragmentGeometry g = fragment_geometry(spec);
  if (spec.layer_count > 1 && 2.0 * g.amp >= g.gap) {
    std::ostringstream msg;
    msg << "generate_fragment: sheets would self-intersect: 2 x warp_amplitude (" << 2 * spec.warp_amplitude
        << " um) must be below layer_gap (" << spec.layer_gap << " um)";
    throw Error(msg.str());
  }

  const int inked_layers = std::min(spec.layer_count, 2);
  std::vector<Mask> masks;
  masks.push_back(layout_text(spec.ink_text, g.nx, g.nz, spec.glyph_scale));
  if (inked_layers > 1)
    masks.push_back(layout_text(spec.hidden_text.empty() ? reversed_text(spec.ink_text) : spec.hidden_text, g.nx,
                                g.nz, spec.glyph_scale));

  const Dims3 dims{g.nx, g.ny, g.nz};
  RawPhantom raw{FloatGrid(dims, 0.0f), Grid3<std::uint8_t>(dims, 0), Grid3<std::uint8_t>(dims, 0)};
  parallel_for(static_cast<std::size_t>(g.nz), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    std::vector<CenterSample> centers(static_cast<std::size_t>(spec.layer_count));
    for (int x = 0; x < g.nx; ++x) {
      for (int l = 0; l < spec.layer_count; ++l) centers[l] = layer_center(g, l, x, z);
      for (int y = 0; y < g.ny; ++y) {
        for (int l = 0; l < spec.layer_count; ++l) {
          const CenterSample& c = centers[l];
          const double d = y - c.c;
          if (std::abs(d) > g.t / 2) continue;
          // Foot point on the center surface, first order in the slope.
          const double k = d / (1.0 + c.cx * c.cx + c.cz * c.cz);
          const double u = x + k * c.cx, v = z + k * c.cz;
          raw.values.at(x, y, z) =
              static_cast<float>(kPapyrusBase * (1.0 + spec.fiber_amplitude * fiber_pattern(u, v, g.period)));
          if (l < inked_layers && d + g.t / 2 < g.ink) {
            const bool ink = mask_at(masks[l], u, v);
            raw.band.at(x, y, z) = ink ? 2 : 1;
            if (ink) raw.voxel_ink.at(x, y, z) = static_cast<std::uint8_t>(l + 1);
          }
          break;
        }
      }
    }
  });

  FragmentPhantom out{volume::VoxelGrid(Grid3<std::uint16_t>(Dims3{1, 1, 1}), 1.0), {}, {}};
  out.volume = finish(raw, spec, out.truth.stats);
  out.truth.voxel_ink = std::move(raw.voxel_ink);
  out.truth.provenance = spec;
  for (int l = 0; l < spec.layer_count; ++l) {
    LayerTruth layer;
    layer.true_mesh = make_grid_mesh(g.nz, g.nx, [&](int r, int c) {
      return Eigen::Vector3d(c, layer_center(g, l, c, r).c, r);
    });
    layer.true_mesh.uv.reserve(layer.true_mesh.vertices.size());
    for (int r = 0; r < g.nz; ++r)
      for (int c = 0; c < g.nx; ++c) layer.true_mesh.uv.emplace_back(c, r);
    layer.ink_mask = l < inked_layers ? masks[l] : Mask(g.nx, g.nz, 0);
    out.truth.layers.push_back(std::move(layer));
  }

  auto rng = stream_rng(spec.seed, kPhotoStream, 0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double angle = unit(rng) * 5.0 * std::numbers::pi / 180.0;
  const double scale = 1.0 + 0.03 * unit(rng);
  const Eigen::Vector2d shift(10.0 * unit(rng) / std::sqrt(2.0), 10.0 * unit(rng) / std::sqrt(2.0));
  const Eigen::Vector2d pivot((g.nx - 1) / 2.0, (g.nz - 1) / 2.0);
  out.photo.applied_transform = Affine2D::from_similarity(angle, scale, pivot, shift);
  out.photo.image = make_photo(masks[0], out.photo.applied_transform);
  return out;
}

double SpiralGeometry::arc_length(double theta) const {
  // Closed form of the integral of sqrt(r^2 + b^2) over theta for r = r0 + b theta.
  auto prim = [this](double rho) {
    const double q = std::sqrt(rho * rho + b * b);
    return (rho * q + b * b * std::log(rho + q)) / (2.0 * b);
  };
  return prim(radius(theta)) - prim(r0);
}

SpiralGeometry spiral_geometry(const PhantomSpec& spec) {
  SpiralGeometry s;
  const double t = spec.sheet_thickness / spec.voxel_size;
  s.r0 = spec.core_radius / spec.voxel_size;
  s.b = spec.spiral_pitch / spec.voxel_size / (2.0 * std::numbers::pi);
  s.theta_max = 2.0 * std::numbers::pi * spec.wraps;
  const double rmax = s.radius(s.theta_max) + t / 2 + kAirMargin;
  s.center = std::ceil(rmax);
  s.size = 2 * static_cast<int>(s.center) + 1;
  return s;
}

ScrollPhantom generate_scroll(const PhantomSpec& spec) {
  spec.validate();
  if (spec.kind != Kind::scroll) throw Error("generate_scroll: spec.kind must be scroll");
  if (spec.spiral_pitch < spec.sheet_thickness)
    throw Error("generate_scroll: spiral_pitch must be >= sheet_thickness or wraps interpenetrate");
  if (spec.core_radius <= spec.sheet_thickness / 2) throw Error("generate_scroll: core_radius must exceed half the sheet");
  const SpiralGeometry s = spiral_geometry(spec);
  const double t = spec.sheet_thickness / spec.voxel_size;
  const double ink_t = spec.ink_thickness / spec.voxel_size;
  const double period = spec.fiber_period / spec.voxel_size;
  const int uv_width = static_cast<int>(std::ceil(s.arc_length(s.theta_max))) + 1;
  const Mask mask = layout_text(spec.ink_text, uv_width, spec.extent_z, spec.glyph_scale);

  const Dims3 dims{s.size, s.size, spec.extent_z};
  RawPhantom raw{FloatGrid(dims, 0.0f), Grid3<std::uint8_t>(dims, 0), Grid3<std::uint8_t>(dims, 0)};
  parallel_for(static_cast<std::size_t>(dims.nz), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    for (int y = 0; y < dims.ny; ++y) {
      for (int x = 0; x < dims.nx; ++x) {
        const double dx = x - s.center, dy = y - s.center;
        const double r = std::hypot(dx, dy);
        double phi = std::atan2(dy, dx);
        if (phi < 0) phi += 2.0 * std::numbers::pi;
        for (int k = 0; k < spec.wraps; ++k) {
          const double theta = phi + 2.0 * std::numbers::pi * k;
          const double d = r - s.radius(theta);
          if (std::abs(d) > t / 2) continue;
          const double u = s.arc_length(theta);
          raw.values.at(x, y, z) =
              static_cast<float>(kPapyrusBase * (1.0 + spec.fiber_amplitude * fiber_pattern(u, z, period)));
          if (d + t / 2 < ink_t) {
            const bool ink = mask_at(mask, u, z);
            raw.band.at(x, y, z) = ink ? 2 : 1;
            if (ink) raw.voxel_ink.at(x, y, z) = 1;
          }
          break;
        }
      }
    }
  });

  ScrollPhantom out{volume::VoxelGrid(Grid3<std::uint16_t>(Dims3{1, 1, 1}), 1.0), {}};
  out.volume = finish(raw, spec, out.truth.stats);
  out.truth.voxel_ink = std::move(raw.voxel_ink);
  out.truth.provenance = spec;
  LayerTruth layer;
  std::vector<double> thetas(static_cast<std::size_t>(uv_width));
  for (int c = 0; c < uv_width; ++c) thetas[c] = std::min(newton_theta_for_arc(s, c), s.theta_max);
  layer.true_mesh = make_grid_mesh(spec.extent_z, uv_width, [&](int r, int c) {
    const double th = thetas[c], rad = s.radius(th);
    return Eigen::Vector3d(s.center + rad * std::cos(th), s.center + rad * std::sin(th), r);
  });
  for (int r = 0; r < spec.extent_z; ++r)
    for (int c = 0; c < uv_width; ++c) layer.true_mesh.uv.emplace_back(s.arc_length(thetas[c]), r);
  layer.ink_mask = mask;
  out.truth.layers.push_back(std::move(layer));
  return out;
}

std::size_t count_ink_inconsistencies(const PhantomSpec& spec, const GroundTruth& truth) {
  const auto& vox = truth.voxel_ink;
  const Dims3 d = vox.dims();
  auto any_ink = [&](int layer, double cx, double cy, double cz, int radius) {
    const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
    const int z0 = static_cast<int>(std::floor(cz));
    for (int z = z0 - radius; z <= z0 + radius + 1; ++z)
      for (int y = y0 - radius; y <= y0 + radius + 1; ++y)
        for (int x = x0 - radius; x <= x0 + radius + 1; ++x)
          if (vox.contains(x, y, z) && vox.at(x, y, z) == layer + 1) return true;
    return false;
  };
  std::size_t bad = 0;
  const double t = spec.sheet_thickness / spec.voxel_size;
  if (spec.kind == Kind::fragment) {
    const auto g = fragment_geometry(spec);
    for (std::size_t l = 0; l < truth.layers.size(); ++l) {
      const Mask& m = truth.layers[l].ink_mask;
      for (int v = 0; v < m.height(); ++v)
        for (int u = 0; u < m.width(); ++u)
          if (m.at(u, v) && !any_ink(static_cast<int>(l), u, layer_center(g, static_cast<int>(l), u, v).c - t / 2, v, 2))
            ++bad;
    }
  } else {
    const SpiralGeometry s = spiral_geometry(spec);
    const Mask& m = truth.layers.front().ink_mask;
    for (int v = 0; v < m.height(); ++v) {
      for (int u = 0; u < m.width(); ++u) {
        if (!m.at(u, v)) continue;
        const double th = newton_theta_for_arc(s, u);
        const double r = s.radius(th) - t / 2;
        if (!any_ink(0, s.center + r * std::cos(th), s.center + r * std::sin(th), v, 2)) ++bad;
      }
    }
  }
  (void)d;
  return bad;
}

void write_affine(const std::filesystem::path& path, const Affine2D& t) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) out << t.m(r, c) << (r == 1 && c == 2 ? "\n" : " ");
  io::write_text(path, out.str());
}

Affine2D read_affine(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  Affine2D t;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> t.m(r, c))) throw FormatError(path.string() + ": expected 6 numbers (row-major 2x3)");
  return t;
}

namespace {

void save_common(const std::filesystem::path& dir, const volume::VoxelGrid& vol, const GroundTruth& truth) {
  io::save_slice_stack(dir / "volume", vol);
  const auto gt = dir / "ground_truth";
  std::filesystem::create_directories(gt);
  for (std::size_t l = 0; l < truth.layers.size(); ++l) {
    io::write_mask_png(gt / ("layer" + std::to_string(l) + "_ink.png"), truth.layers[l].ink_mask);
    write_obj(gt / ("layer" + std::to_string(l) + ".obj"), truth.layers[l].true_mesh);
  }
  io::write_text(dir / "phantom.cfg", config::serialize(spec_to_config(truth.provenance)));
}

}  // namespace

void save_fragment(const std::filesystem::path& dir, const FragmentPhantom& phantom) {
  save_common(dir, phantom.volume, phantom.truth);
  const auto gt = dir / "ground_truth";
  Image2D<std::uint16_t> photo(phantom.photo.image.width(), phantom.photo.image.height());
  for (std::size_t i = 0; i < photo.size(); ++i)
    photo.data()[i] = volume::quantize_value(phantom.photo.image.data()[i], {0.0, 1.0});
  io::write_tiff16(gt / "photo.tif", photo);
  write_affine(gt / "photo_transform.txt", phantom.photo.applied_transform);
}

void save_scroll(const std::filesystem::path& dir, const ScrollPhantom& phantom) {
  save_common(dir, phantom.volume, phantom.truth);
}

}  // namespace vu::phantom
