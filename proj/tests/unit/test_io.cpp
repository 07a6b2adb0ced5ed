#include <doctest.h>

#include <filesystem>
#include <random>

#include "test_util.hpp"
#include "vu/io.hpp"

using namespace vu;
namespace fs = std::filesystem;

TEST_CASE("slice stack load") {
  test::TempDir tmp;
  SUBCASE("constant stack") {
    for (int z = 0; z < 4; ++z) {
      char name[16];
      std::snprintf(name, sizeof name, "%04d.tif", z);
      io::write_tiff16(tmp.path() / name, Image2D<std::uint16_t>(8, 8, 7));
    }
    io::write_meta(tmp.path() / "meta.json", {{"voxel_size_um", "4"}, {"energy", "70"}});
    const auto g = io::load_slice_stack(tmp.path());
    CHECK(g.dims() == Dims3{8, 8, 4});
    CHECK(g.voxel_size() == 4.0);
    CHECK(g.meta().at("energy") == "70");
    for (auto v : g.grid().data()) CHECK(v == 7);
  }
  SUBCASE("gap in the index sequence") {
    for (int z : {0, 1, 3}) {
      char name[16];
      std::snprintf(name, sizeof name, "%04d.tif", z);
      io::write_tiff16(tmp.path() / name, Image2D<std::uint16_t>(4, 4, 1));
    }
    io::write_meta(tmp.path() / "meta.json", {{"voxel_size_um", "4"}});
    CHECK_THROWS_WITH_AS(io::load_slice_stack(tmp.path()), doctest::Contains("gap in slice index sequence"),
                         FormatError);
  }
  SUBCASE("missing meta") {
    io::write_tiff16(tmp.path() / "0000.tif", Image2D<std::uint16_t>(4, 4, 1));
    CHECK_THROWS_AS(io::load_slice_stack(tmp.path()), FormatError);
  }
  SUBCASE("inconsistent slice dims") {
    io::write_tiff16(tmp.path() / "0000.tif", Image2D<std::uint16_t>(4, 4, 1));
    io::write_tiff16(tmp.path() / "0001.tif", Image2D<std::uint16_t>(5, 4, 1));
    io::write_meta(tmp.path() / "meta.json", {{"voxel_size_um", "4"}});
    CHECK_THROWS_AS(io::load_slice_stack(tmp.path()), FormatError);
  }
  SUBCASE("non 16-bit input") {
    io::write_tiff_float(tmp.path() / "0000.tif", FloatImage(4, 4, 1.0f));
    io::write_meta(tmp.path() / "meta.json", {{"voxel_size_um", "4"}});
    CHECK_THROWS_AS(io::load_slice_stack(tmp.path()), FormatError);
  }
  SUBCASE("anisotropic voxels") {
    io::write_tiff16(tmp.path() / "0000.tif", Image2D<std::uint16_t>(4, 4, 1));
    io::write_meta(tmp.path() / "meta.json", {{"voxel_size_um", "4"}, {"voxel_size_z_um", "8"}});
    CHECK_THROWS_AS(io::load_slice_stack(tmp.path()), FormatError);
  }
}

TEST_CASE("slice stack save/load round trip is bit-identical") {
  test::TempDir tmp;
  std::mt19937 rng(3);
  Grid3<std::uint16_t> g(Dims3{13, 7, 5});
  for (auto& v : g.data()) v = static_cast<std::uint16_t>(rng());
  const volume::VoxelGrid grid(std::move(g), 3.25, {{"seed", "9"}});
  io::save_slice_stack(tmp.path() / "a", grid);
  const auto back = io::load_slice_stack(tmp.path() / "a");
  CHECK(back == grid);
  io::save_slice_stack(tmp.path() / "b", back);
  CHECK(io::load_slice_stack(tmp.path() / "b") == grid);
  CHECK(io::sha256_file(tmp.path() / "a" / "0003.tif") == io::sha256_file(tmp.path() / "b" / "0003.tif"));
}

TEST_CASE("raw float grid with dims sidecar") {
  test::TempDir tmp;
  FloatGrid g(Dims3{3, 4, 2});
  for (std::size_t i = 0; i < g.data().size(); ++i) g.data()[i] = 0.5f * static_cast<float>(i) - 3.0f;
  io::save_raw_float_grid(tmp.path() / "v.raw", tmp.path() / "meta.json", g);
  CHECK(io::load_raw_float_grid(tmp.path() / "v.raw", tmp.path() / "meta.json") == g);
}

TEST_CASE("png masks and float tiffs") {
  test::TempDir tmp;
  Mask m(5, 3, 0);
  m.at(1, 2) = 1;
  io::write_mask_png(tmp.path() / "m.png", m);
  CHECK(io::read_mask_png(tmp.path() / "m.png") == m);
  FloatImage f(4, 2, 0.25f);
  f.at(3, 1) = -1.5f;
  io::write_tiff_float(tmp.path() / "f.tif", f);
  CHECK(io::read_tiff_float(tmp.path() / "f.tif") == f);
}

TEST_CASE("sha256 known vector") {
  const std::string abc = "abc";
  CHECK(io::sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
