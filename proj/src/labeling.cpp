#include "vu/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "vu/error.hpp"
#include "vu/io.hpp"
#include "vu/parallel.hpp"

namespace vu::labeling {

Affine2D estimate_affine(std::span<const Landmark> pairs) {
  if (pairs.size() < 3)
    throw Error("estimate_affine: need at least 3 landmark pairs, got " + std::to_string(pairs.size()));
  const int n = static_cast<int>(pairs.size());
  // Centre the photo points so the collinearity test is scale aware.
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pairs) mean += p.photo;
  mean /= n;
  Eigen::MatrixXd centred(n, 2);
  for (int i = 0; i < n; ++i) centred.row(i) = (pairs[i].photo - mean).transpose();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
  const auto sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(1) <= 1e-9 * sv(0))
    throw Error("estimate_affine: landmarks are collinear; need three non-collinear points");

  Eigen::MatrixXd A(n, 3);
  Eigen::MatrixXd B(n, 2);
  for (int i = 0; i < n; ++i) {
    A.row(i) << pairs[i].photo.x() - mean.x(), pairs[i].photo.y() - mean.y(), 1.0;
    B.row(i) = pairs[i].uv.transpose();
  }
  const Eigen::MatrixXd X = A.colPivHouseholderQr().solve(B);  // 3 x 2
  Affine2D t;
  t.m.leftCols<2>() = X.topRows<2>().transpose();
  t.m.col(2) = X.row(2).transpose() - t.m.leftCols<2>() * mean;
  if (std::abs(t.det()) <= 1e-9) throw Error("estimate_affine: recovered transform is singular");
  return t;
}

std::vector<Landmark> read_landmarks(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<Landmark> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    Landmark l;
    std::string extra;
    if (!(row >> l.photo.x() >> l.photo.y() >> l.uv.x() >> l.uv.y()) || (row >> extra))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'px py u v'");
    out.push_back(l);
  }
  return out;
}

void write_landmarks(const std::filesystem::path& path, std::span<const Landmark> pairs) {
  std::ostringstream out;
  out.precision(17);
  out << "# px py u v\n";
  for (const auto& l : pairs) out << l.photo.x() << ' ' << l.photo.y() << ' ' << l.uv.x() << ' ' << l.uv.y() << '\n';
  io::write_text(path, out.str());
}

WarpedPhoto warp_photo(const FloatImage& photo, const Affine2D& t, int width, int height) {
  if (!(std::abs(t.det()) > 1e-9)) throw Error("warp_photo: transform is not invertible");
  if (width < 1 || height < 1) throw Error("warp_photo: output dimensions must be positive");
  const Affine2D inv = t.inverse();
  WarpedPhoto out{FloatImage(width, height, 0.0f), Mask(width, height, 0)};
  parallel_for(static_cast<std::size_t>(height), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    for (int i = 0; i < width; ++i) {
      const Eigen::Vector2d p = inv.apply({i, j});
      if (const auto v = sample_bilinear(photo, p.x(), p.y())) {
        out.image.at(i, j) = *v;
        out.region.at(i, j) = 1;
      }
    }
  });
  return out;
}

Threshold parse_threshold(const std::string& spec) {
  if (spec == "otsu") return {ThresholdMethod::otsu, 0.0};
  if (spec.rfind("fixed:", 0) == 0) {
    try {
      std::size_t used = 0;
      const double v = std::stod(spec.substr(6), &used);
      if (used == spec.size() - 6) return {ThresholdMethod::fixed, v};
    } catch (const std::exception&) {
    }
  }
  throw Error("threshold must be 'otsu' or 'fixed:<value>', got '" + spec + "'");
}

double otsu_threshold(std::span<const float> values) {
  if (values.empty()) throw Error("otsu: no pixels in region");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (!(hi > lo)) throw Error("otsu: image is constant inside the region; use a fixed threshold (fixed:<value>)");
  constexpr int bins = 256;
  const double width = (hi - lo) / bins;
  std::vector<double> hist(bins, 0.0);
  for (float v : values) hist[std::min(bins - 1, static_cast<int>((v - lo) / width))] += 1;
  double total_sum = 0;
  for (int b = 0; b < bins; ++b) total_sum += b * hist[b];
  const double n = static_cast<double>(values.size());
  // Between-class variance for a split after bin k.
  std::vector<double> score(bins - 1, 0.0);
  double w0 = 0, sum0 = 0;
  for (int k = 0; k + 1 < bins; ++k) {
    w0 += hist[k];
    sum0 += k * hist[k];
    const double w1 = n - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (total_sum - sum0) / w1;
    score[k] = w0 * w1 * (m0 - m1) * (m0 - m1);
  }
  const double best = *std::max_element(score.begin(), score.end());
  // Longest run of splits that reach the maximum; take its middle.
  int run_start = -1, best_start = 0, best_len = 0;
  for (int k = 0; k <= bins - 1; ++k) {
    const bool top = k < bins - 1 && score[k] >= best * (1 - 1e-12);
    if (top && run_start < 0) run_start = k;
    if (!top && run_start >= 0) {
      if (k - run_start > best_len) {
        best_len = k - run_start;
        best_start = run_start;
      }
      run_start = -1;
    }
  }
  const int k = best_start + (best_len - 1) / 2;
  return lo + (k + 1) * width;
}

LabelImage binarize(const FloatImage& aligned, const Mask& region, const Threshold& method) {
  if (aligned.width() != region.width() || aligned.height() != region.height())
    throw Error("binarize: image and region dimensions differ");
  std::vector<float> inside;
  for (std::size_t k = 0; k < aligned.data().size(); ++k)
    if (region.data()[k]) inside.push_back(aligned.data()[k]);
  if (inside.empty()) throw Error("binarize: region is empty");
  LabelImage out;
  out.method = method.method;
  out.threshold = method.method == ThresholdMethod::otsu ? otsu_threshold(inside) : method.value;
  out.region = region;
  out.ink = Mask(aligned.width(), aligned.height(), 0);
  for (std::size_t k = 0; k < aligned.data().size(); ++k)
    out.ink.data()[k] = region.data()[k] && aligned.data()[k] < out.threshold ? 1 : 0;
  return out;
}

void save_labels(const std::filesystem::path& dir, const LabelImage& labels) {
  std::filesystem::create_directories(dir);
  io::write_mask_png(dir / "ink.png", labels.ink);
  io::write_mask_png(dir / "region.png", labels.region);
  std::ostringstream num;
  num.precision(17);
  num << labels.threshold;
  std::ostringstream m;
  m.precision(17);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) m << (r || c ? " " : "") << labels.transform.m(r, c);
  io::write_meta(dir / "meta.json", {{"threshold", num.str()},
                                     {"method", labels.method == ThresholdMethod::otsu ? "otsu" : "fixed"},
                                     {"transform", m.str()}});
}

LabelImage load_labels(const std::filesystem::path& dir) {
  LabelImage out;
  out.ink = io::read_mask_png(dir / "ink.png");
  out.region = io::read_mask_png(dir / "region.png");
  const auto meta = io::read_meta(dir / "meta.json");
  try {
    out.threshold = std::stod(meta.at("threshold"));
    out.method = meta.at("method") == "fixed" ? ThresholdMethod::fixed : ThresholdMethod::otsu;
    std::istringstream in(meta.at("transform"));
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c) in >> out.transform.m(r, c);
    if (!in) throw FormatError("bad transform");
  } catch (const std::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": malformed label metadata (" + e.what() + ")");
  }
  return out;
}

}  // namespace vu::labeling
