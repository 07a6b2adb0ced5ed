#include <doctest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "vu/parallel.hpp"
#include "vu/phantom.hpp"
#include "vu/unwrap.hpp"

using namespace vu;
using namespace vu::unwrap;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

// Least-squares similarity fit src -> dst; returns the RMS residual.
double similarity_residual(const std::vector<Vector2d>& src, const std::vector<Vector2d>& dst) {
  Vector2d ms = Vector2d::Zero(), md = Vector2d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= src.size();
  md /= dst.size();
  // Complex least squares: dst - md = a (src - ms), a = sum conj(s) d / sum |s|^2.
  double re = 0, im = 0, den = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vector2d s = src[i] - ms, d = dst[i] - md;
    re += s.x() * d.x() + s.y() * d.y();
    im += s.x() * d.y() - s.y() * d.x();
    den += s.squaredNorm();
  }
  re /= den;
  im /= den;
  double ss = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vector2d s = src[i] - ms, d = dst[i] - md;
    const Vector2d pred(re * s.x() - im * s.y(), im * s.x() + re * s.y());
    ss += (pred - d).squaredNorm();
  }
  return std::sqrt(ss / src.size());
}

// Rigid fit allowing a reflection.
double rigid_residual(std::vector<Vector2d> src, const std::vector<Vector2d>& dst) {
  const double direct = similarity_residual(src, dst);
  for (auto& p : src) p.y() = -p.y();
  return std::min(direct, similarity_residual(src, dst));
}

SurfaceMesh cylinder_strip(int rows, int cols, double radius) {
  return make_grid_mesh(rows, cols, [&](int r, int c) {
    const double th = 0.5 * std::numbers::pi * c / (cols - 1);
    return Vector3d(radius * std::cos(th), radius * std::sin(th), 40.0 * r / (rows - 1));
  });
}

}  // namespace

TEST_CASE("flatten_mesh") {
  SUBCASE("planar mesh develops onto itself") {
    const auto mesh = make_grid_mesh(12, 17, [](int r, int c) {
      return Vector3d(c + 0.3 * std::sin(0.7 * r), r + 0.2 * std::cos(1.3 * c), 5.0);
    });
    const auto f = flatten_mesh(mesh);
    CHECK(f.distortion.max_area_deviation() < 1e-6);
    CHECK(f.distortion.max_angle_deviation() < 1e-6);
    std::vector<Vector2d> xy;
    for (const auto& v : mesh.vertices) xy.emplace_back(v.x(), v.y());
    CHECK(similarity_residual(f.base.uv, xy) < 1e-6);
    // Columns run along +u, rows along +v, chart starts at the origin.
    CHECK(f.base.uv[mesh.vertex(0, 16)].x() > f.base.uv[mesh.vertex(0, 0)].x() + 10);
    CHECK(f.base.uv[mesh.vertex(11, 0)].y() > f.base.uv[mesh.vertex(0, 0)].y() + 5);
    double umin = 1e9, vmin = 1e9;
    for (const auto& p : f.base.uv) {
      umin = std::min(umin, p.x());
      vmin = std::min(vmin, p.y());
    }
    CHECK(umin == doctest::Approx(0.0));
    CHECK(vmin == doctest::Approx(0.0));
    CHECK(count_flipped(f.base) == 0);
  }
  SUBCASE("quarter cylinder matches its analytic development") {
    const double radius = 30;
    const auto mesh = cylinder_strip(20, 40, radius);
    const auto f = flatten_mesh(mesh, 4.0);
    CHECK(f.uv_scale == 4.0);
    CHECK(f.distortion.max_area_deviation() < 1e-3);
    std::vector<Vector2d> dev;
    for (int r = 0; r < 20; ++r)
      for (int c = 0; c < 40; ++c) dev.emplace_back(c * 2 * radius * std::sin(0.25 * std::numbers::pi / 39), 40.0 * r / 19);
    CHECK(rigid_residual(f.base.uv, dev) < 1e-6);
  }
  SUBCASE("large cylinder strip stays within the bound") {
    const auto f = flatten_mesh(cylinder_strip(200, 200, 80));
    CHECK(f.distortion.max_area_deviation() < 1e-3);
    CHECK(count_flipped(f.base) == 0);
  }
  SUBCASE("spherical cap has angle distortion but no error") {
    const auto mesh = make_grid_mesh(15, 15, [](int r, int c) {
      const double x = c - 7.0, y = r - 7.0;
      return Vector3d(x, y, std::sqrt(20.0 * 20.0 - x * x - y * y));
    });
    const auto f = flatten_mesh(mesh);
    CHECK(f.distortion.max_angle_deviation() > 0);
    CHECK(f.distortion.max_area_deviation() > 1e-4);
    CHECK(count_flipped(f.base) == 0);
  }
  SUBCASE("phantom meshes flatten without flips") {
    phantom::PhantomSpec spec;
    spec.extent_x = 64;
    spec.extent_z = 32;
    spec.glyph_scale = 1;
    spec.ink_text = "A";
    const auto p = phantom::generate_fragment(spec);
    for (const auto& l : p.truth.layers) CHECK(count_flipped(flatten_mesh(l.true_mesh).base) == 0);
  }
  SUBCASE("degenerate mesh") {
    auto mesh = make_grid_mesh(3, 3, [](int r, int c) { return Vector3d(c, r, 0); });
    for (auto& v : mesh.vertices) v = Vector3d::Zero();
    CHECK_THROWS_AS(flatten_mesh(mesh), Error);
  }
}

TEST_CASE("rasterize and UV round trip") {
  const auto mesh = make_grid_mesh(30, 40, [](int r, int c) {
    const double th = 0.02 * c;
    return Vector3d(25 * std::cos(th) + 3, 25 * std::sin(th) + 2, 0.8 * r + 0.05 * c);
  });
  const auto f = flatten_mesh(mesh);
  for (double ppv : {1.0, 2.0}) {
    const auto raster = rasterize(f, ppv);
    const auto normals = vertex_normals(f.base);
    double worst = 0;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      const Vector2d px = raster.uv_to_pixel(f.base.uv[v]);
      Vector3d p, n;
      const int i = std::clamp(static_cast<int>(std::lround(px.x())), 0, raster.width - 1);
      const int j = std::clamp(static_cast<int>(std::lround(px.y())), 0, raster.height - 1);
      if (!pixel_to_surface(f, normals, raster, i, j, p, n)) continue;
      worst = std::max(worst, (p - mesh.vertices[v]).norm() * ppv);
    }
    CHECK(worst < 1.5);
  }
}

TEST_CASE("sample_surface_volume") {
  const auto flat = make_grid_mesh(9, 9, [](int r, int c) { return Vector3d(4.0 + c, 4.0 + r, 10.0); });
  const auto f = flatten_mesh(flat);
  SUBCASE("constant field") {
    const volume::VoxelGrid g(Grid3<std::uint16_t>(Dims3{20, 20, 20}, 1234), 1.0);
    const auto sv = sample_surface_volume(g, f, 5, 1.5);
    CHECK(sv.width == 9);
    CHECK(sv.height == 9);
    std::size_t valid = 0;
    for (std::size_t k = 0; k < sv.data.size(); ++k)
      if (sv.valid[k]) {
        CHECK(sv.data[k] == 1234.0f);
        ++valid;
      }
    CHECK(valid == sv.data.size());
  }
  SUBCASE("linear ramp in z gives the analytic offsets") {
    Grid3<std::uint16_t> ramp(Dims3{20, 20, 20});
    for (int z = 0; z < 20; ++z)
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) ramp.at(x, y, z) = static_cast<std::uint16_t>(100 * z);
    const auto sv = sample_surface_volume(volume::VoxelGrid(ramp, 1.0), f, 3, 2.0);
    for (int j = 1; j < sv.height - 1; ++j)
      for (int i = 1; i < sv.width - 1; ++i) {
        CHECK(sv.at(i, j, 0) == doctest::Approx(800));
        CHECK(sv.at(i, j, 1) == doctest::Approx(1000));
        CHECK(sv.at(i, j, 2) == doctest::Approx(1200));
      }
  }
  SUBCASE("rays leaving the grid are invalid") {
    const volume::VoxelGrid g(Grid3<std::uint16_t>(Dims3{20, 20, 12}, 7), 1.0);
    const auto sv = sample_surface_volume(g, f, 5, 1.0);
    for (int j = 0; j < sv.height; ++j)
      for (int i = 0; i < sv.width; ++i) {
        CHECK_FALSE(sv.is_valid(i, j, 4));  // z = 12 is outside
        CHECK(sv.at(i, j, 4) == 0.0f);
        CHECK(sv.is_valid(i, j, 3));
      }
  }
  SUBCASE("independent of thread count") {
    phantom::PhantomSpec spec;
    spec.extent_x = 64;
    spec.extent_z = 32;
    spec.glyph_scale = 1;
    spec.ink_text = "AB";
    const auto p = phantom::generate_fragment(spec);
    const auto fm = flatten_mesh(p.truth.layers[0].true_mesh);
    set_thread_count(1);
    const auto a = sample_surface_volume(p.volume, fm, 9, 1.0);
    set_thread_count(4);
    const auto b = sample_surface_volume(p.volume, fm, 9, 1.0);
    set_thread_count(0);
    CHECK(a == b);
  }
  SUBCASE("errors") {
    const volume::VoxelGrid g(Grid3<std::uint16_t>(Dims3{20, 20, 20}, 1), 1.0);
    CHECK_THROWS_AS(sample_surface_volume(g, f, 4, 1.0), Error);
    CHECK_THROWS_AS(sample_surface_volume(g, f, 3, 0.0), Error);
    FlattenedMesh none{flat, 1.0, {}};
    CHECK_THROWS_AS(sample_surface_volume(g, none, 3, 1.0), Error);
  }
  SUBCASE("save and load") {
    Grid3<std::uint16_t> ramp(Dims3{20, 20, 20});
    for (int z = 0; z < 20; ++z)
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) ramp.at(x, y, z) = static_cast<std::uint16_t>(100 * z + x);
    const auto sv = sample_surface_volume(volume::VoxelGrid(ramp, 1.0), f, 13, 1.0);
    test::TempDir tmp;
    save_surface_volume(tmp.path(), sv);
    const auto back = load_surface_volume(tmp.path());
    CHECK(back.width == sv.width);
    CHECK(back.depth == sv.depth);
    CHECK(back.valid == sv.valid);
    for (std::size_t k = 0; k < sv.data.size(); ++k) CHECK(back.data[k] == doctest::Approx(sv.data[k]).epsilon(1e-3));
  }
}

namespace {

SurfaceVolume tiny(std::vector<float> channels) {
  SurfaceVolume sv;
  sv.width = 2;
  sv.height = 1;
  sv.depth = static_cast<int>(channels.size());
  for (int k = 0; k < sv.depth; ++k) {
    sv.data.push_back(channels[k]);
    sv.data.push_back(0.5f * channels[k]);
  }
  sv.valid.assign(sv.data.size(), 1);
  return sv;
}

}  // namespace

TEST_CASE("texture_image and composite") {
  SUBCASE("single channel is the normalized centre") {
    const auto t = texture_image(tiny({10}), Reduction::max, 0);
    CHECK(t.image.at(0, 0) == 1.0f);
    CHECK(t.image.at(1, 0) == 0.0f);
  }
  SUBCASE("max reduction picks the largest channel") {
    const auto t = texture_image(tiny({8, 10, 12}), Reduction::max, 1);
    CHECK(t.lo == 6.0);
    CHECK(t.hi == 12.0);
    const auto m = texture_image(tiny({8, 10, 12}), Reduction::mean, 1);
    CHECK(m.hi == doctest::Approx(10.0));
  }
  SUBCASE("constant volume normalizes to zero") {
    SurfaceVolume sv = tiny({3, 3, 3});
    for (auto& v : sv.data) v = 3;
    const auto t = texture_image(sv, Reduction::mean, 1);
    for (float v : t.image.data()) CHECK(v == 0.0f);
  }
  SUBCASE("all-invalid pixels are flagged") {
    SurfaceVolume sv = tiny({1, 2, 3});
    for (int k = 0; k < 3; ++k) sv.valid[sv.index(1, 0, k)] = 0;
    const auto t = texture_image(sv, Reduction::max, 1);
    CHECK(t.flagged.at(1, 0) == 1);
    CHECK(t.image.at(1, 0) == 0.0f);
  }
  SUBCASE("half width out of range") { CHECK_THROWS_AS(texture_image(tiny({1, 2, 3}), Reduction::max, 2), Error); }
  SUBCASE("composite") {
    TextureImage t;
    t.image = FloatImage(3, 1, std::vector<float>{0.2f, 0.6f, 1.0f});
    CHECK(composite(t, FloatImage(3, 1, 0.0f)) == t.image);
    const FloatImage black = composite(t, FloatImage(3, 1, 1.0f));
    for (float v : black.data()) CHECK(v == 0.0f);
    CHECK(composite(t, FloatImage(3, 1, 0.9f)).at(1, 0) == 0.0f);
    CHECK_THROWS_AS(composite(t, FloatImage(2, 1, 0.0f)), Error);
  }
  SUBCASE("outputs stay in [0, 1]") {
    const auto t = texture_image(tiny({-4, 9, 2}), Reduction::mean, 1);
    for (float v : t.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }
}
