#include "vu/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <regex>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>
#include <tiffio.h>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "raw float and model files assume a little-endian host");

namespace vu::io {
namespace {

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

void silence_libtiff() {
  static const bool once = [] {
    TIFFSetWarningHandler(nullptr);
    TIFFSetErrorHandler(nullptr);
    return true;
  }();
  (void)once;
}

TiffPtr open_tiff(const fs::path& path, const char* mode) {
  silence_libtiff();
  TiffPtr tif(TIFFOpen(path.c_str(), mode));
  if (!tif) throw FormatError("cannot open TIFF " + path.string());
  return tif;
}

struct TiffInfo {
  std::uint32_t width = 0, height = 0;
  std::uint16_t bits = 0, samples = 1, format = SAMPLEFORMAT_UINT;
};

TiffInfo tiff_info(TIFF* tif, const fs::path& path) {
  TiffInfo info;
  TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &info.width);
  TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &info.height);
  TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &info.bits);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &info.samples);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLEFORMAT, &info.format);
  if (info.samples != 1) throw FormatError(path.string() + ": expected a single-channel image");
  return info;
}

template <class T>
Image2D<T> read_tiff_scanlines(TIFF* tif, const TiffInfo& info, const fs::path& path) {
  Image2D<T> img(static_cast<int>(info.width), static_cast<int>(info.height));
  for (std::uint32_t row = 0; row < info.height; ++row) {
    if (TIFFReadScanline(tif, &img.at(0, static_cast<int>(row)), row, 0) < 0)
      throw FormatError(path.string() + ": failed reading scanline");
  }
  return img;
}

template <class T>
void write_tiff_scanlines(const fs::path& path, const Image2D<T>& img, std::uint16_t format) {
  if (img.width() < 1 || img.height() < 1) throw FormatError("cannot write empty TIFF " + path.string());
  auto tif = open_tiff(path, "w");
  TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width()));
  TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height()));
  TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(sizeof(T) * 8));
  TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(1));
  TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT, format);
  TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
  TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(img.height()));
  std::vector<T> row(static_cast<std::size_t>(img.width()));
  for (int y = 0; y < img.height(); ++y) {
    std::copy_n(&img.at(0, y), img.width(), row.begin());
    if (TIFFWriteScanline(tif.get(), row.data(), static_cast<std::uint32_t>(y), 0) < 0)
      throw FormatError(path.string() + ": failed writing scanline");
  }
}

}  // namespace

Image2D<std::uint16_t> read_tiff16(const fs::path& path) {
  auto tif = open_tiff(path, "r");
  const TiffInfo info = tiff_info(tif.get(), path);
  if (info.bits != 16 || info.format != SAMPLEFORMAT_UINT)
    throw FormatError(path.string() + ": expected 16-bit unsigned grayscale, got " + std::to_string(info.bits) +
                      "-bit");
  return read_tiff_scanlines<std::uint16_t>(tif.get(), info, path);
}

void write_tiff16(const fs::path& path, const Image2D<std::uint16_t>& image) {
  write_tiff_scanlines(path, image, SAMPLEFORMAT_UINT);
}

FloatImage read_tiff_float(const fs::path& path) {
  auto tif = open_tiff(path, "r");
  const TiffInfo info = tiff_info(tif.get(), path);
  if (info.bits != 32 || info.format != SAMPLEFORMAT_IEEEFP)
    throw FormatError(path.string() + ": expected 32-bit float grayscale");
  return read_tiff_scanlines<float>(tif.get(), info, path);
}

void write_tiff_float(const fs::path& path, const FloatImage& image) {
  write_tiff_scanlines(path, image, SAMPLEFORMAT_IEEEFP);
}

Image2D<std::uint8_t> read_png8(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw FormatError("cannot read PNG " + path.string());
  img.format = PNG_FORMAT_GRAY;
  Image2D<std::uint8_t> out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.data().data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError("cannot decode PNG " + path.string());
  }
  return out;
}

void write_png8(const fs::path& path, const Image2D<std::uint8_t>& image) {
  if (image.width() < 1 || image.height() < 1) throw FormatError("cannot write empty PNG " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.data().data(), 0, nullptr))
    throw FormatError("cannot write PNG " + path.string());
}

Mask read_mask_png(const fs::path& path) {
  auto img = read_png8(path);
  for (auto& v : img.data()) v = v >= 128 ? 1 : 0;
  return img;
}

void write_mask_png(const fs::path& path, const Mask& mask) {
  Image2D<std::uint8_t> img(mask.width(), mask.height());
  std::transform(mask.data().begin(), mask.data().end(), img.data().begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_png8(path, img);
}

volume::Meta read_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing meta file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(path.string() + ": expected a flat JSON object");
  volume::Meta meta;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_object() || it->is_array()) throw FormatError(path.string() + ": nested value for key " + it.key());
    meta[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
  }
  return meta;
}

void write_meta(const fs::path& path, const volume::Meta& meta) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta) {
    // Numeric spellings stay numeric so the file reads naturally.
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (!v.empty() && end == v.c_str() + v.size() && std::isfinite(d) && v.find_first_of("xX") == std::string::npos)
      j[k] = nlohmann::ordered_json::parse(v);
    else
      j[k] = v;
  }
  write_text(path, j.dump(2) + "\n");
}

volume::VoxelGrid load_slice_stack(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  const volume::Meta meta = read_meta(dir / "meta.json");
  auto vs = meta.find("voxel_size_um");
  if (vs == meta.end()) throw FormatError(dir.string() + "/meta.json: missing voxel_size_um");
  const double voxel = std::stod(vs->second);
  for (const char* axis : {"voxel_size_x_um", "voxel_size_y_um", "voxel_size_z_um"}) {
    auto it = meta.find(axis);
    if (it != meta.end() && std::stod(it->second) != voxel)
      throw FormatError(dir.string() + ": anisotropic voxels are not supported");
  }

  static const std::regex name_re(R"(^(\d+)\.tif$)");
  std::vector<std::pair<long, fs::path>> slices;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, name_re)) slices.emplace_back(std::stol(m[1].str()), entry.path());
  }
  if (slices.empty()) throw FormatError(dir.string() + ": no NNNN.tif slices");
  std::sort(slices.begin(), slices.end());
  for (std::size_t i = 1; i < slices.size(); ++i) {
    if (slices[i].first != slices[i - 1].first + 1) {
      std::ostringstream msg;
      msg << dir.string() << ": gap in slice index sequence after " << slices[i - 1].first;
      throw FormatError(msg.str());
    }
  }

  Image2D<std::uint16_t> first = read_tiff16(slices.front().second);
  const Dims3 dims{first.width(), first.height(), static_cast<int>(slices.size())};
  Grid3<std::uint16_t> grid(dims);
  const std::size_t plane = static_cast<std::size_t>(dims.nx) * dims.ny;
  for (std::size_t z = 0; z < slices.size(); ++z) {
    Image2D<std::uint16_t> img = z == 0 ? std::move(first) : read_tiff16(slices[z].second);
    if (img.width() != dims.nx || img.height() != dims.ny)
      throw FormatError(slices[z].second.string() + ": inconsistent slice dimensions");
    std::copy(img.data().begin(), img.data().end(), grid.data().begin() + static_cast<std::ptrdiff_t>(z * plane));
  }
  volume::Meta extra = meta;
  extra.erase("voxel_size_um");
  return volume::VoxelGrid(std::move(grid), voxel, std::move(extra));
}

void save_slice_stack(const fs::path& dir, const volume::VoxelGrid& grid) {
  fs::create_directories(dir);
  const Dims3& d = grid.dims();
  const std::size_t plane = static_cast<std::size_t>(d.nx) * d.ny;
  const int digits = std::max(4, static_cast<int>(std::to_string(d.nz - 1).size()));
  for (int z = 0; z < d.nz; ++z) {
    auto begin = grid.grid().data().begin() + static_cast<std::ptrdiff_t>(z * plane);
    Image2D<std::uint16_t> img(d.nx, d.ny, std::vector<std::uint16_t>(begin, begin + static_cast<std::ptrdiff_t>(plane)));
    std::ostringstream name;
    name << std::setw(digits) << std::setfill('0') << z << ".tif";
    write_tiff16(dir / name.str(), img);
  }
  volume::Meta meta = grid.meta();
  std::ostringstream vs;
  vs << std::setprecision(17) << grid.voxel_size();
  meta["voxel_size_um"] = vs.str();
  write_meta(dir / "meta.json", meta);
}

FloatGrid load_raw_float_grid(const fs::path& raw_path, const fs::path& meta_path) {
  const auto meta = read_meta(meta_path);
  auto it = meta.find("dims");
  if (it == meta.end()) throw FormatError(meta_path.string() + ": missing dims");
  std::istringstream ds(it->second);
  Dims3 dims;
  if (!(ds >> dims.nx >> dims.ny >> dims.nz)) throw FormatError(meta_path.string() + ": dims must be \"nx ny nz\"");
  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + raw_path.string());
  std::vector<float> data(dims.count());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != data.size() * sizeof(float))
    throw FormatError(raw_path.string() + ": file shorter than dims imply");
  return FloatGrid(dims, std::move(data));
}

void save_raw_float_grid(const fs::path& raw_path, const fs::path& meta_path, const FloatGrid& grid) {
  std::ofstream out(raw_path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(grid.data().data()),
            static_cast<std::streamsize>(grid.data().size() * sizeof(float)));
  if (!out) throw FormatError("cannot write " + raw_path.string());
  const auto& d = grid.dims();
  write_meta(meta_path, {{"dims", std::to_string(d.nx) + " " + std::to_string(d.ny) + " " + std::to_string(d.nz)}});
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string sha256_file(const fs::path& path) {
  const std::string text = read_text(path);
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace vu::io
