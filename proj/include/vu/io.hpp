#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "vu/grid.hpp"
#include "vu/volume.hpp"

namespace vu::io {

namespace fs = std::filesystem;

Image2D<std::uint16_t> read_tiff16(const fs::path& path);
void write_tiff16(const fs::path& path, const Image2D<std::uint16_t>& image);

/// Single-channel 32-bit IEEE float TIFF.
FloatImage read_tiff_float(const fs::path& path);
void write_tiff_float(const fs::path& path, const FloatImage& image);

/// 8-bit grayscale PNG.
Image2D<std::uint8_t> read_png8(const fs::path& path);
void write_png8(const fs::path& path, const Image2D<std::uint8_t>& image);

/// Binary masks are stored as 0/255 PNGs and read back as 0/1.
Mask read_mask_png(const fs::path& path);
void write_mask_png(const fs::path& path, const Mask& mask);

/// Flat key/value JSON object. Non-string values are read back in their JSON spelling.
volume::Meta read_meta(const fs::path& path);
void write_meta(const fs::path& path, const volume::Meta& meta);

/// Directory of NNNN.tif 16-bit slices plus meta.json carrying voxel_size_um.
volume::VoxelGrid load_slice_stack(const fs::path& dir);
void save_slice_stack(const fs::path& dir, const volume::VoxelGrid& grid);

/// Raw little-endian float32 volume; dims come from the "dims" entry ("nx ny nz") of meta_path.
FloatGrid load_raw_float_grid(const fs::path& raw_path, const fs::path& meta_path);
void save_raw_float_grid(const fs::path& raw_path, const fs::path& meta_path, const FloatGrid& grid);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const fs::path& path);

}  // namespace vu::io
