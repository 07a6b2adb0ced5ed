#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vu/config.hpp"
#include "vu/ink_model.hpp"
#include "vu/labeling.hpp"
#include "vu/mesh.hpp"
#include "vu/phantom.hpp"
#include "vu/segmentation.hpp"
#include "vu/unwrap.hpp"

namespace vu::pipeline {

inline constexpr const char* kToolVersion = "1.0.0";

/// Everything one run needs, parsed from a flat `key = value` file.
struct PipelineConfig {
  std::uint64_t seed = 0;
  phantom::PhantomSpec phantom;

  int layer = 0;
  int seed_count = 17;     // trace seeds spread along x on slice z0
  double spacing = 2.0;    // particle spacing, voxels
  int z0 = 0;
  int z1 = -1;             // -1: last slice
  segmentation::TraceParams trace;

  int depth = 33;
  double step = 1.0;
  double px_per_voxel = 1.0;

  int landmark_grid = 5;   // landmarks per side
  labeling::Threshold threshold;

  int cv_rows = 2;
  int cv_cols = 2;
  ink::PatchSpec patch;
  std::vector<int> hidden{64, 32};
  ink::TrainConfig train;
  bool train_full = false;  // also fit one model on every region
  int predict_stride = 1;

  unwrap::Reduction reduction = unwrap::Reduction::max;
  int texture_half_width = 4;

  double eval_threshold = 0.5;
  bool positive_is_ink = true;
  std::optional<std::filesystem::path> gt_transcription;
  std::optional<std::filesystem::path> pred_transcription;

  config::KeyValues source;  // as read, used for the hash
  std::string hash;          // sha256 of the canonical text

  static PipelineConfig from_kv(const config::KeyValues& kv, const std::filesystem::path& base_dir = {});
};

PipelineConfig load_config(const std::filesystem::path& path);

const std::vector<std::string>& stage_names();

/// --out wins, then VU_OUTPUT_ROOT, then ./runs.
std::filesystem::path resolve_output_root(const std::optional<std::filesystem::path>& cli);

/// Trace seeds on slice z of a fragment layer, taken from the analytic sheet center.
std::vector<Eigen::Vector2d> truth_seeds(const phantom::PhantomSpec& spec, int layer, int z, int count);

/// RMS of (traced y - analytic center y) over all mesh vertices.
double rms_to_truth(const phantom::PhantomSpec& spec, int layer, const SurfaceMesh& mesh);

/// Simulated landmark picking: a grid of points on the layer's true chart is
/// located on the traced mesh (closest point) and paired with its photo position.
std::vector<labeling::Landmark> truth_landmarks(const phantom::PhantomSpec& spec, int layer,
                                                const unwrap::FlattenedMesh& fmesh, const unwrap::UvRaster& raster,
                                                const Affine2D& uv_to_photo, int grid);

/// rows x cols tiles covering a width x height raster.
std::vector<ink::Rect> region_grid(int width, int height, int rows, int cols);

struct StageReport {
  std::string name;
  bool skipped = false;
  double seconds = 0.0;
};

/// Runs stages inside <root>/<first 16 hex of config hash>, keeping
/// manifest.json up to date. A stage whose inputs and outputs still hash as
/// recorded is skipped.
class Runner {
 public:
  Runner(PipelineConfig config, const std::filesystem::path& output_root, std::ostream* log = nullptr);

  const std::filesystem::path& run_dir() const { return dir_; }
  const PipelineConfig& config() const { return cfg_; }
  const nlohmann::ordered_json& manifest() const { return manifest_; }

  StageReport run_stage(const std::string& name);
  std::vector<StageReport> run_all();

 private:
  void save_manifest() const;
  std::vector<std::filesystem::path> inputs_of(const std::string& stage) const;
  nlohmann::ordered_json run_body(const std::string& stage);

  PipelineConfig cfg_;
  std::filesystem::path dir_;
  std::ostream* log_;
  nlohmann::ordered_json manifest_;
};

/// Relative path -> sha256 for every regular file below `dir`, sorted.
nlohmann::ordered_json hash_tree(const std::filesystem::path& root, const std::filesystem::path& dir);

}  // namespace vu::pipeline
