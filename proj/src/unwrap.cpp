#include "vu/unwrap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <queue>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "vu/error.hpp"
#include "vu/io.hpp"
#include "vu/parallel.hpp"

namespace vu::unwrap {

using Eigen::Vector2d;
using Eigen::Vector3d;

double Distortion::max_area_deviation() const {
  double m = 0;
  for (double r : area_ratio) m = std::max(m, std::abs(r - 1.0));
  return m;
}

double Distortion::max_angle_deviation() const {
  double m = 0;
  for (double a : angle_deviation) m = std::max(m, a);
  return m;
}

namespace {

std::vector<int> boundary_vertices(const SurfaceMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  std::vector<std::uint8_t> on(mesh.vertices.size(), 0);
  for (const auto& [e, n] : edges)
    if (n == 1) on[e.first] = on[e.second] = 1;
  std::vector<int> out;
  for (std::size_t i = 0; i < on.size(); ++i)
    if (on[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<double> edge_dijkstra(const SurfaceMesh& mesh, const std::vector<std::vector<int>>& adj, int src) {
  std::vector<double> dist(mesh.vertices.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> q;
  dist[src] = 0;
  q.push({0.0, src});
  while (!q.empty()) {
    const auto [d, v] = q.top();
    q.pop();
    if (d > dist[v]) continue;
    for (int w : adj[v]) {
      const double nd = d + (mesh.vertices[v] - mesh.vertices[w]).norm();
      if (nd < dist[w]) {
        dist[w] = nd;
        q.push({nd, w});
      }
    }
  }
  return dist;
}

// Double sweep over edge-graph distances: farthest boundary vertex from an
// arbitrary boundary vertex, then farthest from that one.
std::tuple<int, int, double> distant_boundary_pair(const SurfaceMesh& mesh) {
  const auto boundary = boundary_vertices(mesh);
  if (boundary.size() < 2) throw Error("flatten_mesh: mesh has no boundary (not a disk)");
  std::vector<std::vector<int>> adj(mesh.vertices.size());
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      adj[f[k]].push_back(f[(k + 1) % 3]);
      adj[f[(k + 1) % 3]].push_back(f[k]);
    }
  auto farthest = [&](const std::vector<double>& d) {
    int best = boundary.front();
    for (int b : boundary)
      if (d[b] > d[best]) best = b;
    return best;
  };
  const int a = farthest(edge_dijkstra(mesh, adj, boundary.front()));
  const auto da = edge_dijkstra(mesh, adj, a);
  const int b = farthest(da);
  if (!std::isfinite(da[b]) || !(da[b] > 0)) throw Error("flatten_mesh: mesh is disconnected or degenerate");
  return {a, b, da[b]};
}

double corner_angle(const Vector3d& p, const Vector3d& q, const Vector3d& r) {
  const Vector3d u = q - p, v = r - p;
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

double corner_angle(const Vector2d& p, const Vector2d& q, const Vector2d& r) {
  const Vector2d u = q - p, v = r - p;
  return std::atan2(std::abs(u.x() * v.y() - u.y() * v.x()), u.dot(v));
}

void orient_grid_chart(SurfaceMesh& m) {
  if (m.rows < 2 || m.cols < 2 || static_cast<std::size_t>(m.rows * m.cols) != m.vertices.size()) return;
  Vector2d along = Vector2d::Zero(), across = Vector2d::Zero();
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c + 1 < m.cols; ++c) along += m.uv[m.vertex(r, c + 1)] - m.uv[m.vertex(r, c)];
  const double angle = std::atan2(along.y(), along.x());
  const Eigen::Rotation2Dd rot(-angle);
  for (auto& p : m.uv) p = rot * p;
  for (int r = 0; r + 1 < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) across += m.uv[m.vertex(r + 1, c)] - m.uv[m.vertex(r, c)];
  if (across.y() < 0)
    for (auto& p : m.uv) p.y() = -p.y();
}

}  // namespace

int count_flipped(const SurfaceMesh& mesh) {
  int pos = 0, neg = 0;
  for (const auto& f : mesh.faces) {
    const double a = signed_area_2d(mesh.uv[f[0]], mesh.uv[f[1]], mesh.uv[f[2]]);
    if (a > 0) ++pos;
    else ++neg;
  }
  return std::min(pos, neg);
}

FlattenedMesh flatten_mesh(const SurfaceMesh& mesh, double voxel_size_um) {
  validate_mesh(mesh);
  const int nv = static_cast<int>(mesh.vertices.size());
  const auto [pin_a, pin_b, length] = distant_boundary_pair(mesh);

  // Unknowns: u_0..u_{n-1}, v_0..v_{n-1}. Per triangle, in a local orthonormal
  // frame, conformality is grad v = rot90(grad u); each triangle adds the two
  // component residuals weighted by sqrt(area).
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.faces.size() * 12);
  int row = 0;
  for (const auto& f : mesh.faces) {
    const Vector3d& p0 = mesh.vertices[f[0]];
    const Vector3d e1 = (mesh.vertices[f[1]] - p0).normalized();
    const Vector3d n = (mesh.vertices[f[1]] - p0).cross(mesh.vertices[f[2]] - p0);
    const double area = 0.5 * n.norm();
    const Vector3d e2 = n.normalized().cross(e1);
    Vector2d q[3];
    for (int k = 0; k < 3; ++k) {
      const Vector3d d = mesh.vertices[f[k]] - p0;
      q[k] = {d.dot(e1), d.dot(e2)};
    }
    const double w = std::sqrt(area);
    for (int k = 0; k < 3; ++k) {
      // grad of the hat function of corner k: perp of the opposite edge / (2A).
      const Vector2d opp = q[(k + 2) % 3] - q[(k + 1) % 3];
      const Vector2d g = Vector2d(-opp.y(), opp.x()) / (2.0 * area);
      const int u = f[k], v = nv + f[k];
      trip.emplace_back(row, v, w * g.x());
      trip.emplace_back(row, u, w * g.y());
      trip.emplace_back(row + 1, v, w * g.y());
      trip.emplace_back(row + 1, u, -w * g.x());
    }
    row += 2;
  }
  Eigen::SparseMatrix<double> A(row, 2 * nv);
  A.setFromTriplets(trip.begin(), trip.end());

  // Eliminate the pinned unknowns: columns of fixed values move to the right-hand side.
  std::vector<int> free_index(2 * nv, -1);
  Eigen::VectorXd fixed = Eigen::VectorXd::Zero(2 * nv);
  std::vector<std::uint8_t> pinned(2 * nv, 0);
  pinned[pin_a] = pinned[nv + pin_a] = pinned[pin_b] = pinned[nv + pin_b] = 1;
  fixed[pin_b] = length;
  int nfree = 0;
  for (int i = 0; i < 2 * nv; ++i)
    if (!pinned[i]) free_index[i] = nfree++;
  std::vector<Eigen::Triplet<double>> ft;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(row);
  for (int k = 0; k < A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
      const int col = static_cast<int>(it.col());
      if (pinned[col]) rhs[it.row()] -= it.value() * fixed[col];
      else ft.emplace_back(static_cast<int>(it.row()), free_index[col], it.value());
    }
  Eigen::SparseMatrix<double> F(row, nfree);
  F.setFromTriplets(ft.begin(), ft.end());
  const Eigen::SparseMatrix<double> normal = F.transpose() * F;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
  if (solver.info() != Eigen::Success) throw Error("flatten_mesh: conformal system is singular (degenerate mesh)");
  const Eigen::VectorXd x = solver.solve(F.transpose() * rhs);
  if (solver.info() != Eigen::Success || !x.allFinite())
    throw Error("flatten_mesh: conformal system is singular (degenerate mesh)");

  FlattenedMesh out;
  out.base = mesh;
  out.base.uv.resize(nv);
  for (int i = 0; i < nv; ++i) {
    const double u = pinned[i] ? fixed[i] : x[free_index[i]];
    const double v = pinned[nv + i] ? fixed[nv + i] : x[free_index[nv + i]];
    out.base.uv[i] = {u, v};
  }
  SurfaceMesh& m = out.base;

  const int flips = count_flipped(m);
  if (flips > 0) throw Error("flatten_mesh: " + std::to_string(flips) + " flipped triangles after solve");

  double area3 = 0, area2 = 0;
  for (const auto& f : m.faces) {
    area3 += triangle_area(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    area2 += std::abs(signed_area_2d(m.uv[f[0]], m.uv[f[1]], m.uv[f[2]]));
  }
  if (!(area2 > 0)) throw Error("flatten_mesh: chart collapsed to zero area");
  const double s = std::sqrt(area3 / area2);
  for (auto& p : m.uv) p *= s;
  orient_grid_chart(m);
  Vector2d lo = m.uv.front();
  for (const auto& p : m.uv) lo = lo.cwiseMin(p);
  for (auto& p : m.uv) p -= lo;

  out.uv_scale = voxel_size_um;
  out.distortion.area_ratio.reserve(m.faces.size());
  out.distortion.angle_deviation.reserve(m.faces.size());
  for (const auto& f : m.faces) {
    const Vector3d* P[3] = {&m.vertices[f[0]], &m.vertices[f[1]], &m.vertices[f[2]]};
    const Vector2d* Q[3] = {&m.uv[f[0]], &m.uv[f[1]], &m.uv[f[2]]};
    out.distortion.area_ratio.push_back(std::abs(signed_area_2d(*Q[0], *Q[1], *Q[2])) /
                                        triangle_area(*P[0], *P[1], *P[2]));
    double dev = 0;
    for (int k = 0; k < 3; ++k)
      dev = std::max(dev, std::abs(corner_angle(*Q[k], *Q[(k + 1) % 3], *Q[(k + 2) % 3]) -
                                   corner_angle(*P[k], *P[(k + 1) % 3], *P[(k + 2) % 3])));
    out.distortion.angle_deviation.push_back(dev);
  }
  return out;
}

UvRaster rasterize(const FlattenedMesh& fmesh, double px_per_voxel) {
  const SurfaceMesh& m = fmesh.base;
  if (!m.has_uv()) throw Error("rasterize: mesh has no UV coordinates");
  if (!(px_per_voxel > 0)) throw Error("rasterize: px_per_voxel must be positive");
  Vector2d lo = m.uv.front(), hi = m.uv.front();
  for (const auto& p : m.uv) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  UvRaster r;
  r.px_per_voxel = px_per_voxel;
  r.origin = lo;
  r.width = static_cast<int>(std::floor((hi.x() - lo.x()) * px_per_voxel + 1e-9)) + 1;
  r.height = static_cast<int>(std::floor((hi.y() - lo.y()) * px_per_voxel + 1e-9)) + 1;
  r.triangle.assign(static_cast<std::size_t>(r.width) * r.height, -1);
  r.weights.assign(r.triangle.size(), Vector3d::Zero());
  constexpr double eps = 1e-9;
  for (std::size_t t = 0; t < m.faces.size(); ++t) {
    const auto& f = m.faces[t];
    const Vector2d a = r.uv_to_pixel(m.uv[f[0]]), b = r.uv_to_pixel(m.uv[f[1]]), c = r.uv_to_pixel(m.uv[f[2]]);
    const double area = signed_area_2d(a, b, c);
    if (area == 0) continue;
    const int i0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
    const int i1 = std::min(r.width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int j0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
    const int j1 = std::min(r.height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const Vector2d p(i, j);
        const double wa = signed_area_2d(p, b, c) / area, wb = signed_area_2d(a, p, c) / area;
        const double wc = 1.0 - wa - wb;
        if (wa < -eps || wb < -eps || wc < -eps) continue;
        const std::size_t idx = r.index(i, j);
        if (r.triangle[idx] >= 0) continue;
        r.triangle[idx] = static_cast<int>(t);
        r.weights[idx] = {wa, wb, wc};
      }
  }
  return r;
}

bool pixel_to_surface(const FlattenedMesh& fmesh, const std::vector<Vector3d>& normals, const UvRaster& raster, int i,
                      int j, Vector3d& point, Vector3d& normal) {
  if (i < 0 || j < 0 || i >= raster.width || j >= raster.height) return false;
  const std::size_t idx = raster.index(i, j);
  const int t = raster.triangle[idx];
  if (t < 0) return false;
  const auto& f = fmesh.base.faces[t];
  const Vector3d& w = raster.weights[idx];
  point = w[0] * fmesh.base.vertices[f[0]] + w[1] * fmesh.base.vertices[f[1]] + w[2] * fmesh.base.vertices[f[2]];
  if (!normals.empty()) {
    normal = w[0] * normals[f[0]] + w[1] * normals[f[1]] + w[2] * normals[f[2]];
    const double len = normal.norm();
    normal = len > 0 ? Vector3d(normal / len) : Vector3d::Zero();
  }
  return true;
}

SurfaceVolume sample_surface_volume(const volume::VoxelGrid& grid, const FlattenedMesh& fmesh, int depth,
                                    double step, double px_per_voxel) {
  if (!fmesh.base.has_uv()) throw Error("sample_surface_volume: mesh has no UV coordinates");
  if (depth < 1 || depth % 2 == 0) throw Error("sample_surface_volume: channel count D must be odd");
  if (!(step > 0)) throw Error("sample_surface_volume: step must be positive");
  const UvRaster raster = rasterize(fmesh, px_per_voxel);
  const auto normals = vertex_normals(fmesh.base);
  SurfaceVolume sv;
  sv.width = raster.width;
  sv.height = raster.height;
  sv.depth = depth;
  sv.step = step;
  sv.px_per_voxel = px_per_voxel;
  sv.uv_scale = fmesh.uv_scale;
  const std::size_t n = static_cast<std::size_t>(sv.width) * sv.height * depth;
  sv.data.assign(n, 0.0f);
  sv.valid.assign(n, 0);
  parallel_for(static_cast<std::size_t>(sv.height), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    Vector3d p, nrm;
    for (int i = 0; i < sv.width; ++i) {
      if (!pixel_to_surface(fmesh, normals, raster, i, j, p, nrm)) continue;
      for (int k = 0; k < depth; ++k)
        if (const auto v = volume::sample_trilinear(grid, p + sv.offset(k) * nrm)) {
          sv.data[sv.index(i, j, k)] = *v;
          sv.valid[sv.index(i, j, k)] = 1;
        }
    }
  });
  return sv;
}

Reduction parse_reduction(const std::string& s) {
  if (s == "max") return Reduction::max;
  if (s == "mean") return Reduction::mean;
  throw Error("unknown texture reduction '" + s + "' (expected max or mean)");
}

std::string to_string(Reduction r) { return r == Reduction::max ? "max" : "mean"; }

TextureImage texture_image(const SurfaceVolume& sv, Reduction reduction, int half_width) {
  if (half_width < 0 || half_width > sv.depth / 2)
    throw Error("texture_image: half_width must lie in [0, D/2]");
  TextureImage t;
  t.image = FloatImage(sv.width, sv.height, 0.0f);
  t.flagged = Mask(sv.width, sv.height, 0);
  t.source = to_string(reduction) + "/" + std::to_string(half_width);
  const int c = sv.depth / 2;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int j = 0; j < sv.height; ++j)
    for (int i = 0; i < sv.width; ++i) {
      double acc = reduction == Reduction::max ? -std::numeric_limits<double>::infinity() : 0.0;
      int count = 0;
      for (int k = c - half_width; k <= c + half_width; ++k) {
        if (!sv.is_valid(i, j, k)) continue;
        const double v = sv.at(i, j, k);
        acc = reduction == Reduction::max ? std::max(acc, v) : acc + v;
        ++count;
      }
      if (count == 0) {
        t.flagged.at(i, j) = 1;
        continue;
      }
      if (reduction == Reduction::mean) acc /= count;
      t.image.at(i, j) = static_cast<float>(acc);
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
    }
  if (!(hi > lo)) {
    std::fill(t.image.data().begin(), t.image.data().end(), 0.0f);
    t.lo = t.hi = std::isfinite(lo) ? lo : 0.0;
    return t;
  }
  t.lo = lo;
  t.hi = hi;
  for (std::size_t k = 0; k < t.image.data().size(); ++k)
    t.image.data()[k] = t.flagged.data()[k] ? 0.0f : std::clamp(static_cast<float>((t.image.data()[k] - lo) / (hi - lo)), 0.0f, 1.0f);
  return t;
}

FloatImage composite(const TextureImage& texture, const FloatImage& prediction) {
  if (texture.image.width() != prediction.width() || texture.image.height() != prediction.height())
    throw Error("composite: texture is " + std::to_string(texture.image.width()) + "x" +
                std::to_string(texture.image.height()) + " but prediction is " + std::to_string(prediction.width()) +
                "x" + std::to_string(prediction.height()));
  FloatImage out(prediction.width(), prediction.height());
  for (std::size_t k = 0; k < out.data().size(); ++k)
    out.data()[k] = std::clamp(texture.image.data()[k] - prediction.data()[k], 0.0f, 1.0f);
  return out;
}

void save_surface_volume(const std::filesystem::path& dir, const SurfaceVolume& sv) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < sv.data.size(); ++k)
    if (sv.valid[k]) {
      lo = std::min<double>(lo, sv.data[k]);
      hi = std::max<double>(hi, sv.data[k]);
    }
  if (!std::isfinite(lo)) lo = hi = 0;
  if (!(hi > lo)) hi = lo + 1;
  const volume::IntensityWindow window{lo, hi};
  std::filesystem::create_directories(dir / "valid");
  for (int k = 0; k < sv.depth; ++k) {
    Image2D<std::uint16_t> img(sv.width, sv.height);
    Mask valid(sv.width, sv.height);
    for (int j = 0; j < sv.height; ++j)
      for (int i = 0; i < sv.width; ++i) {
        img.at(i, j) = volume::quantize_value(sv.at(i, j, k), window);
        valid.at(i, j) = sv.is_valid(i, j, k) ? 1 : 0;
      }
    char name[32];
    std::snprintf(name, sizeof name, "%04d", k);
    io::write_tiff16(dir / (std::string(name) + ".tif"), img);
    io::write_mask_png(dir / "valid" / (std::string(name) + ".png"), valid);
  }
  std::ostringstream num;
  num.precision(17);
  auto str = [&](double v) {
    num.str("");
    num << v;
    return num.str();
  };
  io::write_meta(dir / "meta.json", {{"kind", "surface_volume"},
                                     {"channels", std::to_string(sv.depth)},
                                     {"step", str(sv.step)},
                                     {"px_per_voxel", str(sv.px_per_voxel)},
                                     {"uv_scale", str(sv.uv_scale)},
                                     {"window_lo", str(lo)},
                                     {"window_hi", str(hi)}});
}

SurfaceVolume load_surface_volume(const std::filesystem::path& dir) {
  const auto meta = io::read_meta(dir / "meta.json");
  auto get = [&](const char* key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw FormatError((dir / "meta.json").string() + ": missing '" + key + "'");
    return std::stod(it->second);
  };
  SurfaceVolume sv;
  sv.depth = static_cast<int>(get("channels"));
  sv.step = get("step");
  sv.px_per_voxel = get("px_per_voxel");
  sv.uv_scale = get("uv_scale");
  const volume::IntensityWindow window{get("window_lo"), get("window_hi")};
  for (int k = 0; k < sv.depth; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%04d", k);
    const auto img = io::read_tiff16(dir / (std::string(name) + ".tif"));
    const auto valid = io::read_mask_png(dir / "valid" / (std::string(name) + ".png"));
    if (k == 0) {
      sv.width = img.width();
      sv.height = img.height();
      sv.data.assign(static_cast<std::size_t>(sv.width) * sv.height * sv.depth, 0.0f);
      sv.valid.assign(sv.data.size(), 0);
    }
    if (img.width() != sv.width || img.height() != sv.height || valid.width() != sv.width ||
        valid.height() != sv.height)
      throw FormatError(dir.string() + ": channel " + std::to_string(k) + " has inconsistent dimensions");
    for (int j = 0; j < sv.height; ++j)
      for (int i = 0; i < sv.width; ++i) {
        const bool ok = valid.at(i, j) != 0;
        sv.valid[sv.index(i, j, k)] = ok;
        sv.data[sv.index(i, j, k)] = ok ? static_cast<float>(volume::dequantize_value(img.at(i, j), window)) : 0.0f;
      }
  }
  return sv;
}

}  // namespace vu::unwrap
