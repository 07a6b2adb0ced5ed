#pragma once

#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <vector>

#include "vu/error.hpp"

namespace vu {

/// Dense row-major 2D raster. Pixel (x, y) lives at data[y * width + x].
template <class T>
class Image2D {
 public:
  Image2D() = default;
  Image2D(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}
  Image2D(int width, int height, std::vector<T> data) : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != checked_size(width, height)) throw Error("Image2D: data length does not match dims");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Image2D&) const = default;

 private:
  static std::size_t checked_size(int w, int h) {
    if (w < 0 || h < 0) throw Error("Image2D: negative dims");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using FloatImage = Image2D<float>;
using Mask = Image2D<std::uint8_t>;

struct Dims3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool operator==(const Dims3&) const = default;
};

/// Dense 3D array in z-major slice order: index = (z * ny + y) * nx + x.
template <class T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims), data_(validated(dims).count(), fill) {}
  Grid3(Dims3 dims, std::vector<T> data) : dims_(validated(dims)), data_(std::move(data)) {
    if (data_.size() != dims_.count()) throw Error("Grid3: data length does not match dims");
  }

  const Dims3& dims() const noexcept { return dims_; }
  std::size_t index(int x, int y, int z) const noexcept {
    return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
  }
  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

  T& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[index(x, y, z)]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Grid3&) const = default;

 private:
  static Dims3 validated(Dims3 d) {
    if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw Error("Grid3: every dimension must be >= 1");
    return d;
  }

  Dims3 dims_;
  std::vector<T> data_;
};

using FloatGrid = Grid3<float>;

}  // namespace vu

#include <cmath>
#include <optional>

namespace vu {

/// Bilinear lookup at continuous pixel coordinates; nullopt outside [0, w-1] x [0, h-1].
inline std::optional<float> sample_bilinear(const FloatImage& img, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width() - 1 && y <= img.height() - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(x), std::max(img.width() - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(img.height() - 2, 0));
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

}  // namespace vu
