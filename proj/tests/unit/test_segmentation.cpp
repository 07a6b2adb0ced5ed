#include <doctest.h>

#include <cmath>
#include <numbers>

#include "vu/phantom.hpp"
#include "vu/segmentation.hpp"

using namespace vu;
using namespace vu::segmentation;
using Eigen::Vector2d;

namespace {

// Bright sheet y = y0 + slope * z with a Gaussian cross-section.
volume::VoxelGrid plane_volume(double y0, double slope, int nz = 24) {
  FloatGrid g(Dims3{64, 48, nz}, 0.0f);
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) {
        const double d = y - (y0 + slope * z);
        g.at(x, y, z) = static_cast<float>(std::exp(-d * d / (2 * 2.0 * 2.0)));
      }
  return volume::quantize(g, {0.0, 1.0});
}

std::vector<Vector2d> line_seeds(double y) { return {{6, y}, {32, y}, {58, y}}; }

double mean_y(const ParticleChain& c) {
  double s = 0;
  for (const auto& p : c.points) s += p.y();
  return s / c.points.size();
}

}  // namespace

TEST_CASE("seed_chain") {
  const auto grid = plane_volume(20, 0);
  SUBCASE("straight segment") {
    const std::vector<Vector2d> seeds{{0, 0}, {10, 0}};
    const auto c = seed_chain(grid, 0, seeds, 1.0);
    REQUIRE(c.points.size() == 11);
    for (int i = 0; i <= 10; ++i) {
      CHECK(c.points[i].x() == doctest::Approx(i).epsilon(1e-12));
      CHECK(c.points[i].y() == 0.0);
    }
  }
  SUBCASE("uniform seeds are a fixed point") {
    std::vector<Vector2d> seeds;
    for (int i = 0; i < 9; ++i) seeds.emplace_back(3 + 1.5 * i, 7 + 2.0 * i);
    const double spacing = std::hypot(1.5, 2.0);
    const auto c = seed_chain(grid, 2, seeds, spacing);
    REQUIRE(c.points.size() == seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) CHECK((c.points[i] - seeds[i]).norm() < 1e-9);
  }
  SUBCASE("errors") {
    const std::vector<Vector2d> outside{{0, 0}, {100, 0}};
    CHECK_THROWS_AS(seed_chain(grid, 0, outside, 1.0), OutOfBounds);
    const std::vector<Vector2d> one{{1, 1}};
    CHECK_THROWS_AS(seed_chain(grid, 0, one, 1.0), Error);
  }
}

TEST_CASE("resampling preserves endpoints and arc length") {
  std::vector<Vector2d> curve;
  for (int i = 0; i <= 40; ++i) {
    const double t = i / 40.0 * std::numbers::pi;
    curve.emplace_back(30 * std::cos(t), 30 * std::sin(t));
  }
  for (double spacing : {0.7, 1.0, 2.3}) {
    const auto r = resample_uniform(curve, spacing);
    CHECK(r.front() == curve.front());
    CHECK(r.back() == curve.back());
    CHECK(std::abs(polyline_length(r) - polyline_length(curve)) / polyline_length(curve) < 0.01);
    for (std::size_t i = 1; i < r.size(); ++i) {
      const double d = (r[i] - r[i - 1]).norm();
      CHECK(d >= 0.5 * spacing);
      CHECK(d <= 2.0 * spacing);
    }
  }
}

TEST_CASE("propagate_chain") {
  TraceParams prm;
  SUBCASE("flat attractor") {
    const auto grid = plane_volume(20, 0);
    auto c = seed_chain(grid, 0, line_seeds(20), 1.0);
    for (int s = 0; s < 10; ++s) {
      c = propagate_chain(grid, c, prm);
      for (const auto& p : c.points) CHECK(std::abs(p.y() - 20) <= 0.5);
    }
  }
  SUBCASE("tilted plane is followed step by step") {
    const auto grid = plane_volume(12, 0.5);
    auto c = seed_chain(grid, 0, line_seeds(12), 1.0);
    const double start = mean_y(c);
    for (int s = 0; s < 20; ++s) {
      c = propagate_chain(grid, c, prm);
      CHECK(c.z == s + 1);
      // Linear interpolation is flat between two equally bright rows, so a
      // single step may advance 0 or 1; the chain never strays from the plane.
      CHECK(std::abs(mean_y(c) - (12 + 0.5 * c.z)) <= 0.5 + 1e-9);
    }
    CHECK(std::abs((mean_y(c) - start) / 20 - 0.5) <= 0.2);
  }
  SUBCASE("zero volume loses the surface") {
    const volume::VoxelGrid zero(Grid3<std::uint16_t>(Dims3{64, 48, 4}, 0), 1.0);
    const auto c = seed_chain(zero, 0, line_seeds(10), 1.0);
    CHECK_THROWS_AS(propagate_chain(zero, c, prm), LostSurface);
  }
  SUBCASE("stepping past the last slice") {
    const auto grid = plane_volume(20, 0, 3);
    const auto c = seed_chain(grid, 2, line_seeds(20), 1.0);
    CHECK_THROWS_AS(propagate_chain(grid, c, prm), OutOfBounds);
  }
  SUBCASE("relaxation never raises the energy") {
    const auto grid = plane_volume(15, 0.5);
    auto c = seed_chain(grid, 0, {{{4, 14}, {30, 19}, {60, 13}}}, 1.0);
    for (int s = 0; s < 8; ++s) {
      PropagationLog log;
      c = propagate_chain(grid, c, prm, &log);
      REQUIRE(log.energies.size() == static_cast<std::size_t>(prm.relax_iters) + 1);
      for (std::size_t k = 1; k < log.energies.size(); ++k) CHECK(log.energies[k] <= log.energies[k - 1]);
    }
  }
  SUBCASE("chain order is preserved on the plane") {
    const auto grid = plane_volume(20, 0);
    auto c = seed_chain(grid, 0, line_seeds(20), 1.0);
    for (int s = 0; s < 5; ++s) {
      c = propagate_chain(grid, c, prm);
      const Vector2d tangent = (c.points.back() - c.points.front()).normalized();
      for (std::size_t i = 1; i < c.points.size(); ++i) CHECK((c.points[i] - c.points[i - 1]).dot(tangent) > 0);
    }
  }
  SUBCASE("invalid params") {
    TraceParams bad;
    bad.search_radius = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.alpha_stiffness = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("trace_surface") {
  TraceParams prm;
  SUBCASE("plane oracle") {
    const auto grid = plane_volume(10, 0.5);
    const auto mesh = trace_surface(grid, line_seeds(10), 1.0, 0, 20, prm);
    CHECK(mesh.rows == 21);
    CHECK(mesh.vertices.size() == static_cast<std::size_t>(mesh.rows * mesh.cols));
    CHECK(mesh.faces.size() == static_cast<std::size_t>(2 * (mesh.rows - 1) * (mesh.cols - 1)));
    CHECK(euler_characteristic(mesh) == 1);
    validate_mesh(mesh);
    // Distance to the plane y - 0.5 z - 10 = 0.
    double ss = 0;
    for (const auto& v : mesh.vertices) {
      const double d = (v.y() - 0.5 * v.z() - 10) / std::sqrt(1.25);
      ss += d * d;
    }
    CHECK(std::sqrt(ss / mesh.vertices.size()) < 0.75);
  }
  SUBCASE("minimal strip") {
    const auto grid = plane_volume(20, 0);
    CHECK(trace_surface(grid, line_seeds(20), 1.0, 3, 4, prm).rows == 2);
    prm.step_dz = 2;
    CHECK(trace_surface(grid, line_seeds(20), 1.0, 3, 5, prm).rows == 2);
  }
  SUBCASE("failure reports completed rows") {
    FloatGrid g(Dims3{64, 48, 10}, 0.0f);
    for (int z = 0; z < 5; ++z)
      for (int x = 0; x < 64; ++x)
        for (int y = 18; y <= 22; ++y) g.at(x, y, z) = 1.0f;
    const auto grid = volume::quantize(g, {0, 1});
    try {
      trace_surface(grid, line_seeds(20), 1.0, 0, 9, prm);
      FAIL("expected TraceFailed");
    } catch (const TraceFailed& e) {
      CHECK(e.rows_completed() == 5);
      CHECK(e.failed_z() == 5);
    }
  }
  SUBCASE("single-wrap scroll follows the spiral") {
    phantom::PhantomSpec spec;
    spec.kind = phantom::Kind::scroll;
    spec.wraps = 1;
    spec.extent_z = 16;
    spec.ink_text = "";
    spec.seed = 3;
    const auto scroll = phantom::generate_scroll(spec);
    const double vs = spec.voxel_size;
    const double r0 = spec.core_radius / vs, b = spec.spiral_pitch / vs / (2 * std::numbers::pi);
    const double c = (scroll.volume.dims().nx - 1) / 2.0;
    std::vector<Vector2d> seeds;
    for (double th = 0.3 * std::numbers::pi; th <= 1.7 * std::numbers::pi; th += 0.1)
      seeds.emplace_back(c + (r0 + b * th) * std::cos(th), c + (r0 + b * th) * std::sin(th));
    TraceParams sp;
    sp.smooth_sigma = 3.0;
    const auto mesh = trace_surface(scroll.volume, seeds, 1.0, 0, spec.extent_z - 1, sp);
    double ss = 0;
    for (const auto& v : mesh.vertices) {
      const double x = v.x() - c, y = v.y() - c;
      double phi = std::atan2(y, x);
      if (phi < 0) phi += 2 * std::numbers::pi;
      const double d = std::hypot(x, y) - (r0 + b * phi);
      ss += d * d;
    }
    CHECK(std::sqrt(ss / mesh.vertices.size()) < 1.0);
  }
}
