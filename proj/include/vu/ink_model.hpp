#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vu/error.hpp"
#include "vu/grid.hpp"
#include "vu/labeling.hpp"
#include "vu/unwrap.hpp"
#include "vu/volume.hpp"

namespace vu::ink {

/// Half-open pixel rectangle [x0, x1) x [y0, y1) on a surface raster.
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
  bool operator==(const Rect&) const = default;
};

/// A labeled rectangle of one surface. The pointed-to data must outlive the region.
struct Region {
  std::string id;
  std::string surface_id;
  const unwrap::SurfaceVolume* sv = nullptr;
  const labeling::LabelImage* labels = nullptr;
  Rect rect;

  void validate() const;
};

struct Fold {
  std::vector<std::size_t> train;
  std::size_t holdout = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
  int k() const { return static_cast<int>(folds.size()); }
};

/// Leave-one-region-out folds.
FoldPlan make_folds(std::span<const Region> regions);

struct PatchSpec {
  volume::PatchShape shape{9, 9, 17};
  bool normalize = true;  // per-patch zero mean, unit variance
};

struct Sample {
  int x = 0;
  int y = 0;
  std::uint8_t label = 0;
};

/// Patch centres of a region at the given stride, skipping pixels outside the
/// label region or with an invalid central sample, shuffled by seed.
std::vector<Sample> extract_training_set(const Region& region, const PatchSpec& patch, int stride,
                                         std::uint64_t seed);

/// Writes the w*h*d patch centred on raster pixel (x, y) and the central
/// channel into out, index (k*h + j)*w + i. Off-raster samples read as 0.
void fill_patch(const unwrap::SurfaceVolume& sv, int x, int y, const PatchSpec& patch, float* out);

class ModelParams {
 public:
  std::vector<int> layer_sizes;  // [in, h1, ..., 1]
  volume::PatchShape input_shape;
  bool normalize = true;
  std::vector<Eigen::MatrixXf> weights;  // layer l: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXf> biases;

  std::size_t parameter_count() const;
  void validate() const;
  bool operator==(const ModelParams& o) const;
};

/// Zero weights and biases.
ModelParams zero_params(std::span<const int> layer_sizes, volume::PatchShape shape, bool normalize);
/// Uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
ModelParams init_params(std::span<const int> layer_sizes, volume::PatchShape shape, bool normalize,
                        std::uint64_t seed);

/// Leaky-ReLU (0.01) hidden layers and a sigmoid output; rejects non-finite input.
double forward(const ModelParams& params, std::span<const float> patch);

/// Max relative error between analytic and central-difference (h = 1e-4) BCE
/// gradients over up to 100 randomly chosen parameters. corrupt_backward
/// perturbs the analytic gradient to exercise the check itself.
double grad_check(const ModelParams& params, std::span<const float> patch, int label, std::uint64_t seed = 0,
                  bool corrupt_backward = false);

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 32;
  int total_batches = 5000;
  std::uint64_t seed = 1;
  bool balance = true;
  int eval_every = 250;
  int sample_stride = 1;
  double momentum = 0.9;

  void validate() const;
};

struct LossRecord {
  int batch = 0;
  double loss = 0.0;          // mean training BCE since the previous record
  double holdout_bce = 0.0;   // NaN without a holdout
  double holdout_dice = 0.0;
  double holdout_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> trace;
  std::size_t train_samples = 0;
  std::size_t train_ink = 0;
  std::size_t hygiene_checked = 0;  // training centres checked against the holdout rect
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<LossRecord> trace) : Error(what), trace_(std::move(trace)) {}
  const std::vector<LossRecord>& trace() const { return trace_; }

 private:
  std::vector<LossRecord> trace_;
};

/// Batch index source. Balanced: the first half of every batch walks the
/// majority class without replacement (reshuffled per pass), the second half
/// draws the minority class with replacement. Otherwise shuffled passes over all.
class BatchSampler {
 public:
  BatchSampler(std::span<const std::uint8_t> labels, int batch_size, bool balance, std::uint64_t seed);
  void next(std::vector<std::uint32_t>& batch);

 private:
  std::vector<std::uint32_t> major_, minor_;
  std::size_t pos_;
  int batch_size_;
  bool balance_;
  std::mt19937_64 rng_;
};

/// Training centres of `train` regions that fall inside the holdout rect of the same surface.
std::size_t count_holdout_leaks(std::span<const Region> regions, std::span<const std::size_t> train,
                                const Region& holdout, const PatchSpec& patch, int stride, std::uint64_t seed);

/// Minibatch SGD with momentum on mean BCE. With a holdout region the trace
/// carries holdout metrics, and any training centre inside the holdout rect is
/// a hard error.
TrainResult train(std::span<const Region> regions, std::span<const std::size_t> train_ids, const Region* holdout,
                  const TrainConfig& config, const PatchSpec& patch, std::span<const int> hidden);

struct PredictionImage {
  FloatImage prob;
  Mask mask;
};

/// Forward pass at every stride-th pixel of rect (plus its last row and
/// column), bilinear fill in between. Pixels outside rect or with an invalid
/// central sample are 0 with the mask cleared.
PredictionImage predict_image(const ModelParams& params, const unwrap::SurfaceVolume& sv, const Rect& rect,
                              int stride = 1);

void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace);

}  // namespace vu::ink
