#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vu/affine.hpp"
#include "vu/grid.hpp"

namespace vu::labeling {

struct Landmark {
  Eigen::Vector2d photo;
  Eigen::Vector2d uv;
};

/// Least-squares affine taking photo points to UV raster points.
Affine2D estimate_affine(std::span<const Landmark> pairs);

/// Rows of "px py u v"; blank lines and '#' comments are skipped.
std::vector<Landmark> read_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, std::span<const Landmark> pairs);

struct WarpedPhoto {
  FloatImage image;
  Mask region;  // 1 where the source pixel lies inside the photo
};

/// Resamples the photo onto a width x height UV raster; t maps photo -> UV.
WarpedPhoto warp_photo(const FloatImage& photo, const Affine2D& t, int width, int height);

enum class ThresholdMethod { otsu, fixed };

struct Threshold {
  ThresholdMethod method = ThresholdMethod::otsu;
  double value = 0.5;  // used by fixed
};

Threshold parse_threshold(const std::string& spec);  // "otsu" or "fixed:<value>"

struct LabelImage {
  Mask ink;
  Mask region;
  double threshold = 0.0;
  ThresholdMethod method = ThresholdMethod::otsu;
  Affine2D transform;
};

/// Otsu threshold of the values (256 bins over their range); ties resolve to
/// the middle of the best plateau. Throws when the values are constant.
double otsu_threshold(std::span<const float> values);

/// Dark pixels (< threshold) inside the region become ink.
LabelImage binarize(const FloatImage& aligned, const Mask& region, const Threshold& method);

/// ink.png, region.png and meta.json holding threshold and transform.
void save_labels(const std::filesystem::path& dir, const LabelImage& labels);
LabelImage load_labels(const std::filesystem::path& dir);

}  // namespace vu::labeling
