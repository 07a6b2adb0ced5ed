#include "vu/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vu/parallel.hpp"

namespace vu::segmentation {

using Eigen::Vector2d;

void TraceParams::validate() const {
  if (step_dz < 1) throw ConfigError("segment.step_dz", "must be >= 1");
  if (search_radius < 1) throw ConfigError("segment.search_radius", "must be >= 1");
  if (!(alpha_stiffness >= 0)) throw ConfigError("segment.alpha_stiffness", "must be >= 0");
  if (!(beta_spacing >= 0)) throw ConfigError("segment.beta_spacing", "must be >= 0");
  if (relax_iters < 0) throw ConfigError("segment.relax_iters", "must be >= 0");
  if (!(smooth_sigma >= 0)) throw ConfigError("segment.smooth_sigma", "must be >= 0");
}

namespace {

std::vector<float> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

// Separable blur with clamped borders.
FloatImage blur(const FloatImage& in, double sigma) {
  if (sigma <= 0) return in;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2), w = in.width(), h = in.height();
  FloatImage tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * in.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(s);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = static_cast<float>(s);
    }
  return out;
}

double intensity(const FloatImage& slice, const Vector2d& p) {
  const auto v = sample_bilinear(slice, p.x(), p.y());
  return v ? *v : 0.0;
}

bool in_slice(const FloatImage& slice, const Vector2d& p) {
  return p.x() >= 0 && p.y() >= 0 && p.x() <= slice.width() - 1 && p.y() <= slice.height() - 1;
}

// Every energy term that involves particle i, with p_i replaced by q.
double local_energy(const FloatImage& slice, const std::vector<Vector2d>& pts, std::size_t i, const Vector2d& q,
                    double spacing, const TraceParams& prm) {
  const std::size_t n = pts.size();
  auto at = [&](std::size_t j) -> const Vector2d& { return j == i ? q : pts[j]; };
  double e = -intensity(slice, q);
  for (std::size_t c = (i == 0 ? 0 : i - 1); c <= std::min(i + 1, n - 1); ++c)
    if (c >= 1 && c + 1 < n) e += prm.alpha_stiffness * (at(c - 1) - 2.0 * at(c) + at(c + 1)).squaredNorm();
  if (i >= 1) {
    const double d = (q - pts[i - 1]).norm() - spacing;
    e += prm.beta_spacing * d * d;
  }
  if (i + 1 < n) {
    const double d = (pts[i + 1] - q).norm() - spacing;
    e += prm.beta_spacing * d * d;
  }
  return e;
}

// Sum of every energy term that touches a particle in [lo, hi]. Moving only
// those particles changes the total energy by exactly the change in this sum.
double partial_energy(const FloatImage& slice, const std::vector<Vector2d>& p, int lo, int hi, double spacing,
                      const TraceParams& prm) {
  const int n = static_cast<int>(p.size());
  double e = 0;
  for (int i = lo; i <= hi; ++i) e -= intensity(slice, p[i]);
  for (int c = std::max(1, lo - 1); c <= std::min(n - 2, hi + 1); ++c)
    e += prm.alpha_stiffness * (p[c - 1] - 2.0 * p[c] + p[c + 1]).squaredNorm();
  for (int i = std::max(0, lo - 1); i <= std::min(n - 2, hi); ++i) {
    const double d = (p[i + 1] - p[i]).norm() - spacing;
    e += prm.beta_spacing * d * d;
  }
  return e;
}

}  // namespace

FloatImage normalized_slice(const volume::VoxelGrid& grid, int z, double smooth_sigma) {
  const Dims3 d = grid.dims();
  if (z < 0 || z >= d.nz) throw OutOfBounds("normalized_slice: z out of range");
  FloatImage raw(d.nx, d.ny);
  for (int y = 0; y < d.ny; ++y)
    for (int x = 0; x < d.nx; ++x) raw.at(x, y) = static_cast<float>(grid.at(x, y, z));
  FloatImage s = blur(raw, smooth_sigma);
  const auto [lo, hi] = std::minmax_element(s.data().begin(), s.data().end());
  const float a = *lo, range = *hi - *lo;
  for (auto& v : s.data()) v = range > 0 ? (v - a) / range : 0.0f;
  return s;
}

double polyline_length(std::span<const Vector2d> points) {
  double len = 0;
  for (std::size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
  return len;
}

std::vector<Vector2d> resample_count(std::span<const Vector2d> points, int n) {
  if (points.size() < 2) throw Error("resample: need at least 2 points");
  if (n < 2) throw Error("resample: need at least 2 output points");
  std::vector<double> cum(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) cum[i] = cum[i - 1] + (points[i] - points[i - 1]).norm();
  const double total = cum.back();
  if (!(total > 0)) throw Error("resample: polyline has zero length");
  std::vector<Vector2d> out(static_cast<std::size_t>(n));
  out.front() = points.front();
  out.back() = points.back();
  std::size_t seg = 1;
  for (int k = 1; k + 1 < n; ++k) {
    const double s = total * k / (n - 1);
    while (seg + 1 < cum.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double t = len > 0 ? (s - cum[seg - 1]) / len : 0.0;
    out[k] = points[seg - 1] + t * (points[seg] - points[seg - 1]);
  }
  return out;
}

std::vector<Vector2d> resample_uniform(std::span<const Vector2d> points, double spacing) {
  if (!(spacing > 0)) throw Error("resample: spacing must be positive");
  const double len = polyline_length(points);
  const int n = std::max(3, static_cast<int>(std::lround(len / spacing)) + 1);
  return resample_count(points, n);
}

double chain_energy(const FloatImage& slice, std::span<const Vector2d> p, double spacing, const TraceParams& prm) {
  double e = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    e -= intensity(slice, p[i]);
    if (i >= 1 && i + 1 < p.size()) e += prm.alpha_stiffness * (p[i - 1] - 2.0 * p[i] + p[i + 1]).squaredNorm();
    if (i + 1 < p.size()) {
      const double d = (p[i + 1] - p[i]).norm() - spacing;
      e += prm.beta_spacing * d * d;
    }
  }
  return e;
}

ParticleChain seed_chain(const volume::VoxelGrid& grid, int z, std::span<const Vector2d> seeds, double spacing) {
  if (seeds.size() < 2) throw Error("seed_chain: need at least 2 seeds");
  if (!(spacing > 0)) throw Error("seed_chain: spacing must be positive");
  const Dims3 d = grid.dims();
  if (z < 0 || z >= d.nz) throw OutOfBounds("seed_chain: slice " + std::to_string(z) + " outside the volume");
  for (const auto& s : seeds)
    if (!(s.x() >= 0 && s.y() >= 0 && s.x() <= d.nx - 1 && s.y() <= d.ny - 1)) {
      std::ostringstream msg;
      msg << "seed_chain: seed (" << s.x() << ", " << s.y() << ") outside slice " << z;
      throw OutOfBounds(msg.str());
    }
  return {z, resample_uniform(seeds, spacing), spacing};
}

namespace {

ParticleChain propagate_on(const FloatImage& slice, const ParticleChain& chain, int z, const TraceParams& prm,
                           PropagationLog* log) {
  const auto& src = chain.points;
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i)
    if (!in_slice(slice, src[i])) {
      std::ostringstream msg;
      msg << "propagate_chain: particle " << i << " left slice " << z;
      throw OutOfBounds(msg.str());
    }

  // Greedy pass: neighbours are held at their projected positions, so every
  // particle can be decided independently.
  std::vector<Vector2d> pts(n);
  std::vector<double> best_intensity(n);
  const int r = prm.search_radius;
  parallel_for(n, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    Vector2d arg = src[i];
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const Vector2d q = src[i] + Vector2d(dx, dy);
        if (!in_slice(slice, q)) continue;
        const double e = local_energy(slice, src, i, q, chain.spacing, prm);
        if (e < best) {
          best = e;
          arg = q;
        }
      }
    pts[i] = arg;
    best_intensity[i] = intensity(slice, arg);
  });
  for (std::size_t i = 0; i < n; ++i)
    if (best_intensity[i] < prm.min_intensity) {
      std::ostringstream msg;
      msg << "propagate_chain: lost the surface at slice " << z << ", particle " << i << " (best intensity "
          << best_intensity[i] << " < " << prm.min_intensity << ")";
      throw LostSurface(static_cast<int>(i), best_intensity[i], msg.str());
    }
  if (log) log->energies.push_back(chain_energy(slice, pts, chain.spacing, prm));

  // Coordinate descent with a halving step. The coordinates are tent-shaped
  // displacements of every width from the whole chain down to one particle:
  // single-particle moves alone barely budge a stiff chain. A move is kept only
  // if it strictly lowers the energy, so rounds never increase E.
  const Vector2d dirs[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  const int ni = static_cast<int>(n);
  std::vector<int> widths{0};  // 0 = rigid translation
  for (int w = std::max(1, ni / 2);; w /= 2) {
    widths.push_back(w);
    if (w == 1) break;
  }
  std::vector<Vector2d> trial;
  for (int round = 0; round < prm.relax_iters; ++round) {
    const double h = std::ldexp(1.0, -(round + 1));
    for (int w : widths) {
      const int stride = std::max(1, w);
      for (int c = 0; c < ni; c += (w == 0 ? ni : stride)) {
        const int lo = w == 0 ? 0 : std::max(0, c - w + 1), hi = w == 0 ? ni - 1 : std::min(ni - 1, c + w - 1);
        double cur = partial_energy(slice, pts, lo, hi, chain.spacing, prm);
        for (const auto& dir : dirs) {
          trial = pts;
          bool inside = true;
          for (int i = lo; i <= hi && inside; ++i) {
            const double weight = w == 0 ? 1.0 : 1.0 - std::abs(i - c) / static_cast<double>(w);
            trial[i] += h * weight * dir;
            inside = in_slice(slice, trial[i]);
          }
          if (!inside) continue;
          const double e = partial_energy(slice, trial, lo, hi, chain.spacing, prm);
          if (e < cur) {
            cur = e;
            pts.swap(trial);
          }
        }
      }
    }
    if (log) log->energies.push_back(chain_energy(slice, pts, chain.spacing, prm));
  }

  return {z, resample_uniform(pts, chain.spacing), chain.spacing};
}

}  // namespace

ParticleChain propagate_chain(const volume::VoxelGrid& grid, const ParticleChain& chain, const TraceParams& params,
                              PropagationLog* log) {
  params.validate();
  if (chain.points.size() < 3) throw Error("propagate_chain: chain needs at least 3 points");
  const int z = chain.z + params.step_dz;
  if (z < 0 || z >= grid.dims().nz)
    throw OutOfBounds("propagate_chain: slice " + std::to_string(z) + " outside the volume");
  return propagate_on(normalized_slice(grid, z, params.smooth_sigma), chain, z, params, log);
}

SurfaceMesh trace_surface(const volume::VoxelGrid& grid, std::span<const Vector2d> seeds, double spacing, int z0,
                          int z1, const TraceParams& params) {
  params.validate();
  const int nz = grid.dims().nz;
  if (z0 < 0 || z1 >= nz || z1 <= z0)
    throw OutOfBounds("trace_surface: z range [" + std::to_string(z0) + ", " + std::to_string(z1) +
                      "] invalid for a volume with " + std::to_string(nz) + " slices");
  std::vector<ParticleChain> chains{seed_chain(grid, z0, seeds, spacing)};
  for (int z = z0 + params.step_dz; z <= z1; z += params.step_dz) {
    try {
      chains.push_back(propagate_chain(grid, chains.back(), params));
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "trace_surface: stopped after " << chains.size() << " completed rows (slices " << z0 << ".."
          << chains.back().z << "): " << e.what();
      throw TraceFailed(static_cast<int>(chains.size()), z, msg.str());
    }
  }
  std::size_t cols = 0;
  for (const auto& c : chains) cols = std::max(cols, c.points.size());
  std::vector<std::vector<Vector2d>> rows;
  rows.reserve(chains.size());
  for (const auto& c : chains)
    rows.push_back(c.points.size() == cols ? c.points : resample_count(c.points, static_cast<int>(cols)));
  SurfaceMesh mesh = make_grid_mesh(static_cast<int>(chains.size()), static_cast<int>(cols), [&](int r, int c) {
    const Vector2d& p = rows[r][c];
    return Eigen::Vector3d(p.x(), p.y(), chains[r].z);
  });
  return mesh;
}

}  // namespace vu::segmentation
