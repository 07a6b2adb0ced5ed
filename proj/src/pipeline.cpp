#include "vu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "vu/error.hpp"
#include "vu/evaluation.hpp"
#include "vu/io.hpp"
#include "vu/volume.hpp"

namespace vu::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"seed"};
    auto add = [&](const std::string& prefix, std::initializer_list<const char*> names) {
      for (const char* n : names) k.insert(prefix + "." + n);
    };
    add("phantom", {"kind", "ink_mode", "wraps", "spiral_pitch", "sheet_thickness", "fiber_period", "fiber_amplitude",
                    "ink_text", "hidden_text", "ink_strength", "ink_thickness", "noise_sigma", "layer_count",
                    "warp_amplitude", "layer_gap", "core_radius", "extent_x", "extent_z", "glyph_scale", "voxel_size",
                    "seed"});
    add("segment", {"layer", "seed_count", "spacing", "z0", "z1", "step_dz", "search_radius", "alpha_stiffness",
                    "beta_spacing", "relax_iters", "min_intensity", "smooth_sigma"});
    add("sample", {"depth", "step", "px_per_voxel"});
    add("label", {"landmarks", "threshold"});
    add("cv", {"rows", "cols"});
    add("model", {"hidden", "patch", "normalize"});
    add("train", {"learning_rate", "batch_size", "total_batches", "seed", "balance", "eval_every", "sample_stride",
                  "momentum", "full"});
    add("predict", {"stride"});
    add("texture", {"reduction", "half_width"});
    add("eval", {"threshold", "positive", "gt_transcription", "pred_transcription"});
    return k;
  }();
  return keys;
}

int as_int(long long v, const std::string& key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(key, "value out of range");
  return static_cast<int>(v);
}

std::string rel(const fs::path& root, const fs::path& p) { return p.lexically_relative(root).generic_string(); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Image2D<std::uint8_t> to_png8(const FloatImage& img) {
  Image2D<std::uint8_t> out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data()[i]), 0.0, 1.0);
    out.data()[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

FloatImage read_photo(const fs::path& path) {
  const auto q = io::read_tiff16(path);
  FloatImage out(q.width(), q.height());
  for (std::size_t i = 0; i < q.size(); ++i)
    out.data()[i] = static_cast<float>(volume::dequantize_value(q.data()[i], {0.0, 1.0}));
  return out;
}

phantom::PhantomSpec read_phantom_spec(const fs::path& run) {
  return phantom::spec_from_config(config::load(run / "phantom" / "phantom.cfg"));
}

void require_fragment(const phantom::PhantomSpec& spec, const std::string& stage) {
  if (spec.kind != phantom::Kind::fragment)
    throw Error(stage + ": the pipeline past the phantom stage needs phantom.kind = fragment");
}

unwrap::FlattenedMesh load_flattened(const fs::path& run) {
  unwrap::FlattenedMesh fm;
  fm.base = read_obj(run / "flatten" / "mesh_uv.obj");
  if (!fm.base.has_uv()) throw FormatError("flatten/mesh_uv.obj has no texture coordinates");
  const auto meta = io::read_meta(run / "flatten" / "flatten.json");
  const auto it = meta.find("uv_scale");
  if (it == meta.end()) throw FormatError("flatten/flatten.json: missing uv_scale");
  fm.uv_scale = std::stod(it->second);
  return fm;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

json rect_json(const ink::Rect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

json pixel_json(const eval::PixelMetrics& m) {
  json j;
  j["bce"] = m.bce;
  j["dice"] = m.dice;
  j["recall"] = m.recall ? json(*m.recall) : json(nullptr);
  j["fpr"] = m.fpr;
  return j;
}

std::vector<ink::LossRecord> read_loss_csv(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<ink::LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    ink::LossRecord r;
    std::string f[4];
    if (!(row >> r.batch >> f[0] >> f[1] >> f[2] >> f[3])) throw FormatError(path.string() + ": malformed row");
    r.loss = std::strtod(f[0].c_str(), nullptr);
    r.holdout_bce = std::strtod(f[1].c_str(), nullptr);
    r.holdout_dice = std::strtod(f[2].c_str(), nullptr);
    r.holdout_accuracy = std::strtod(f[3].c_str(), nullptr);
    out.push_back(r);
  }
  return out;
}

}  // namespace

PipelineConfig PipelineConfig::from_kv(const config::KeyValues& kv, const fs::path& base_dir) {
  for (const auto& [k, v] : kv)
    if (!known_keys().count(k)) throw ConfigError(k, "unknown key");

  PipelineConfig c;
  const config::Section top(kv, "");
  c.seed = top.get_u64("seed");

  c.phantom = phantom::spec_from_config(kv, "phantom");
  if (!kv.count("phantom.seed")) c.phantom.seed = c.seed;

  const config::Section seg(kv, "segment");
  c.layer = as_int(seg.get_int("layer", c.layer), seg.key("layer"));
  c.seed_count = as_int(seg.get_int("seed_count", c.seed_count), seg.key("seed_count"));
  c.spacing = seg.get_double("spacing", c.spacing);
  c.z0 = as_int(seg.get_int("z0", c.z0), seg.key("z0"));
  c.z1 = as_int(seg.get_int("z1", c.z1), seg.key("z1"));
  c.trace.step_dz = as_int(seg.get_int("step_dz", c.trace.step_dz), seg.key("step_dz"));
  c.trace.search_radius = as_int(seg.get_int("search_radius", c.trace.search_radius), seg.key("search_radius"));
  c.trace.alpha_stiffness = seg.get_double("alpha_stiffness", c.trace.alpha_stiffness);
  c.trace.beta_spacing = seg.get_double("beta_spacing", c.trace.beta_spacing);
  c.trace.relax_iters = as_int(seg.get_int("relax_iters", c.trace.relax_iters), seg.key("relax_iters"));
  c.trace.min_intensity = seg.get_double("min_intensity", c.trace.min_intensity);
  c.trace.smooth_sigma = seg.get_double("smooth_sigma", c.trace.smooth_sigma);
  c.trace.validate();
  if (c.layer < 0 || c.layer >= c.phantom.layer_count) throw ConfigError(seg.key("layer"), "no such phantom layer");
  if (c.seed_count < 2) throw ConfigError(seg.key("seed_count"), "must be >= 2");
  if (!(c.spacing > 0)) throw ConfigError(seg.key("spacing"), "must be positive");
  if (c.z0 < 0) throw ConfigError(seg.key("z0"), "must be >= 0");

  const config::Section smp(kv, "sample");
  c.depth = as_int(smp.get_int("depth", c.depth), smp.key("depth"));
  c.step = smp.get_double("step", c.step);
  c.px_per_voxel = smp.get_double("px_per_voxel", c.px_per_voxel);
  if (c.depth < 1) throw ConfigError(smp.key("depth"), "must be positive");
  if (!(c.step > 0)) throw ConfigError(smp.key("step"), "must be positive");
  if (!(c.px_per_voxel > 0)) throw ConfigError(smp.key("px_per_voxel"), "must be positive");

  const config::Section lab(kv, "label");
  c.landmark_grid = as_int(lab.get_int("landmarks", c.landmark_grid), lab.key("landmarks"));
  if (c.landmark_grid < 2) throw ConfigError(lab.key("landmarks"), "must be >= 2 (points per side)");
  try {
    c.threshold = labeling::parse_threshold(lab.get_string("threshold", "otsu"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(lab.key("threshold"), e.what());
  }

  const config::Section cv(kv, "cv");
  c.cv_rows = as_int(cv.get_int("rows", c.cv_rows), cv.key("rows"));
  c.cv_cols = as_int(cv.get_int("cols", c.cv_cols), cv.key("cols"));
  if (c.cv_rows < 1 || c.cv_cols < 1 || c.cv_rows * c.cv_cols < 2)
    throw ConfigError(cv.key("rows"), "cv.rows x cv.cols must give at least 2 regions");

  const config::Section mdl(kv, "model");
  c.hidden = mdl.get_int_list("hidden", c.hidden);
  for (int h : c.hidden)
    if (h < 1) throw ConfigError(mdl.key("hidden"), "layer sizes must be positive");
  const auto patch = mdl.get_int_list("patch", std::vector<int>{c.patch.shape.w, c.patch.shape.h, c.patch.shape.d});
  if (patch.size() != 3 || patch[0] < 1 || patch[1] < 1 || patch[2] < 1)
    throw ConfigError(mdl.key("patch"), "expected three positive sizes w,h,d");
  c.patch.shape = {patch[0], patch[1], patch[2]};
  c.patch.normalize = mdl.get_bool("normalize", c.patch.normalize);
  if (c.patch.shape.d > c.depth) throw ConfigError(mdl.key("patch"), "patch depth exceeds sample.depth");

  const config::Section tr(kv, "train");
  c.train.learning_rate = tr.get_double("learning_rate", c.train.learning_rate);
  c.train.batch_size = as_int(tr.get_int("batch_size", c.train.batch_size), tr.key("batch_size"));
  c.train.total_batches = as_int(tr.get_int("total_batches", c.train.total_batches), tr.key("total_batches"));
  c.train.seed = tr.get_u64("seed", c.seed);
  c.train.balance = tr.get_bool("balance", c.train.balance);
  c.train.eval_every = as_int(tr.get_int("eval_every", c.train.eval_every), tr.key("eval_every"));
  c.train.sample_stride = as_int(tr.get_int("sample_stride", c.train.sample_stride), tr.key("sample_stride"));
  c.train.momentum = tr.get_double("momentum", c.train.momentum);
  c.train_full = tr.get_bool("full", c.train_full);
  c.train.validate();

  const config::Section pr(kv, "predict");
  c.predict_stride = as_int(pr.get_int("stride", c.predict_stride), pr.key("stride"));
  if (c.predict_stride < 1) throw ConfigError(pr.key("stride"), "must be positive");

  const config::Section tex(kv, "texture");
  try {
    c.reduction = unwrap::parse_reduction(tex.get_string("reduction", "max"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(tex.key("reduction"), e.what());
  }
  c.texture_half_width = as_int(tex.get_int("half_width", c.texture_half_width), tex.key("half_width"));
  if (c.texture_half_width < 0) throw ConfigError(tex.key("half_width"), "must be >= 0");

  const config::Section ev(kv, "eval");
  c.eval_threshold = ev.get_double("threshold", c.eval_threshold);
  if (!(c.eval_threshold > 0 && c.eval_threshold < 1)) throw ConfigError(ev.key("threshold"), "must lie in (0, 1)");
  const std::string positive = ev.get_string("positive", "ink");
  if (positive == "ink") c.positive_is_ink = true;
  else if (positive == "background") c.positive_is_ink = false;
  else throw ConfigError(ev.key("positive"), "expected ink or background");
  auto path_of = [&](const char* name) -> std::optional<fs::path> {
    if (!ev.has(name)) return std::nullopt;
    fs::path p = ev.get_string(name);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p;
  };
  c.gt_transcription = path_of("gt_transcription");
  c.pred_transcription = path_of("pred_transcription");
  if (c.gt_transcription.has_value() != c.pred_transcription.has_value())
    throw ConfigError(ev.key(c.gt_transcription ? "pred_transcription" : "gt_transcription"),
                      "transcriptions come in pairs: set both gt_transcription and pred_transcription");

  c.source = kv;
  const std::string canon = config::serialize(kv);
  c.hash = io::sha256_hex({reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size()});
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  return PipelineConfig::from_kv(config::load(path), path.parent_path());
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"phantom", "segment", "flatten", "sample", "label",
                                              "train",   "predict", "composite", "eval"};
  return names;
}

fs::path resolve_output_root(const std::optional<fs::path>& cli) {
  if (cli) return *cli;
  if (const char* env = std::getenv("VU_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

std::vector<Vector2d> truth_seeds(const phantom::PhantomSpec& spec, int layer, int z, int count) {
  require_fragment(spec, "truth_seeds");
  if (count < 2) throw Error("truth_seeds: need at least 2 seeds");
  std::vector<Vector2d> out;
  const double x0 = 1.0, x1 = spec.extent_x - 2.0;
  for (int k = 0; k < count; ++k) {
    const double x = x0 + (x1 - x0) * k / (count - 1);
    out.emplace_back(x, phantom::fragment_layer_center(spec, layer, x, z));
  }
  return out;
}

double rms_to_truth(const phantom::PhantomSpec& spec, int layer, const SurfaceMesh& mesh) {
  if (mesh.vertices.empty()) throw Error("rms_to_truth: empty mesh");
  double se = 0;
  for (const auto& v : mesh.vertices) {
    const double d = v.y() - phantom::fragment_layer_center(spec, layer, v.x(), v.z());
    se += d * d;
  }
  return std::sqrt(se / static_cast<double>(mesh.vertices.size()));
}

std::vector<labeling::Landmark> truth_landmarks(const phantom::PhantomSpec& spec, int layer,
                                                const unwrap::FlattenedMesh& fmesh, const unwrap::UvRaster& raster,
                                                const Affine2D& uv_to_photo, int grid) {
  require_fragment(spec, "truth_landmarks");
  if (grid < 2) throw Error("truth_landmarks: grid must be >= 2");
  const SurfaceMesh& m = fmesh.base;
  const int nz = spec.extent_z;
  std::vector<labeling::Landmark> out;
  for (int b = 1; b <= grid; ++b)
    for (int a = 1; a <= grid; ++a) {
      const double u = (spec.extent_x - 1.0) * a / (grid + 1), v = (nz - 1.0) * b / (grid + 1);
      const Vector3d target(u, phantom::fragment_layer_center(spec, layer, u, v), v);
      double best = std::numeric_limits<double>::infinity();
      Vector2d uv = Vector2d::Zero();
      for (const auto& f : m.faces) {
        const Vector3d& A = m.vertices[f[0]];
        const Vector3d& B = m.vertices[f[1]];
        const Vector3d& C = m.vertices[f[2]];
        const Vector3d w = closest_point_barycentric(target, A, B, C);
        const double d = (w[0] * A + w[1] * B + w[2] * C - target).squaredNorm();
        if (d < best) {
          best = d;
          uv = w[0] * m.uv[f[0]] + w[1] * m.uv[f[1]] + w[2] * m.uv[f[2]];
        }
      }
      // Points the trace did not reach would be placed on its rim; leave them out.
      if (best > 4.0) continue;
      out.push_back({uv_to_photo.apply(Vector2d(u, v)), raster.uv_to_pixel(uv)});
    }
  if (out.size() < 3) throw Error("truth_landmarks: fewer than 3 landmarks lie on the traced surface");
  return out;
}

std::vector<ink::Rect> region_grid(int width, int height, int rows, int cols) {
  if (rows < 1 || cols < 1 || width < cols || height < rows) throw Error("region_grid: raster too small for the grid");
  std::vector<ink::Rect> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.push_back({c * width / cols, r * height / rows, (c + 1) * width / cols, (r + 1) * height / rows});
  return out;
}

json hash_tree(const fs::path& root, const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) files.push_back(dir);
  else if (fs::is_directory(dir))
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[rel(root, f)] = io::sha256_file(f);
  return out;
}

Runner::Runner(PipelineConfig config, const fs::path& output_root, std::ostream* log)
    : cfg_(std::move(config)), dir_(output_root / cfg_.hash.substr(0, 16)), log_(log) {
  fs::create_directories(dir_);
  const fs::path cfg_file = dir_ / "config.cfg";
  io::write_text(cfg_file, config::serialize(cfg_.source));
  const fs::path mpath = dir_ / "manifest.json";
  if (fs::exists(mpath)) {
    try {
      manifest_ = json::parse(io::read_text(mpath));
      if (manifest_.value("config_hash", "") != cfg_.hash) manifest_ = json();
    } catch (const json::exception&) {
      manifest_ = json();
    }
  }
  if (manifest_.is_null()) {
    manifest_ = json::object();
    manifest_["tool"] = "vu";
    manifest_["version"] = kToolVersion;
    manifest_["config_hash"] = cfg_.hash;
    json c = json::object();
    for (const auto& [k, v] : cfg_.source) c[k] = v;
    manifest_["config"] = c;
    manifest_["stages"] = json::object();
    manifest_["metrics"] = json::object();
  }
  manifest_["config_file"] = hash_tree(dir_, cfg_file);
  save_manifest();
}

void Runner::save_manifest() const { write_json(dir_ / "manifest.json", manifest_); }

std::vector<fs::path> Runner::inputs_of(const std::string& s) const {
  const fs::path p = dir_ / "phantom";
  if (s == "phantom") return {};
  if (s == "segment") return {p / "volume", p / "phantom.cfg"};
  if (s == "flatten") return {dir_ / "segment" / "mesh.obj", p / "phantom.cfg"};
  if (s == "sample") return {p / "volume", dir_ / "flatten"};
  if (s == "label")
    return {p / "phantom.cfg", p / "ground_truth" / "photo.tif", p / "ground_truth" / "photo_transform.txt",
            dir_ / "flatten", dir_ / "sample" / "surface_volume" / "meta.json"};
  if (s == "train") return {dir_ / "sample", dir_ / "label" / "labels"};
  if (s == "predict") return {dir_ / "sample", dir_ / "train"};
  if (s == "composite") return {dir_ / "sample", dir_ / "predict"};
  if (s == "eval") {
    std::vector<fs::path> in{dir_ / "label" / "labels", dir_ / "train", dir_ / "predict"};
    if (cfg_.gt_transcription) {
      in.push_back(*cfg_.gt_transcription);
      in.push_back(*cfg_.pred_transcription);
    }
    return in;
  }
  throw ConfigError("", "unknown stage '" + s + "'");
}

StageReport Runner::run_stage(const std::string& name) {
  const auto inputs = inputs_of(name);
  json in = json::object();
  for (const auto& path : inputs) {
    if (!fs::exists(path)) {
      throw Error("stage " + name + ": missing input " + path.string() + " (run the earlier stages first)");
    }
    const std::string r = rel(dir_, path);
    if (!r.empty() && r.rfind("..", 0) != 0) {
      const json files = hash_tree(dir_, path);
      for (const auto& [k, v] : files.items()) in[k] = v;
    } else {
      in["external:" + fs::absolute(path).lexically_normal().generic_string()] = io::sha256_file(path);
    }
  }

  const fs::path out_dir = dir_ / name;
  auto& stages = manifest_["stages"];
  if (stages.contains(name)) {
    const json& prev = stages[name];
    if (prev.contains("inputs") && prev.contains("outputs") && prev.at("inputs") == in && fs::exists(out_dir) &&
        hash_tree(dir_, out_dir) == prev.at("outputs")) {
      if (log_) *log_ << "[" << name << "] up to date, skipped\n";
      stages[name]["status"] = "skipped";
      save_manifest();
      return {name, true, 0.0};
    }
  }

  if (log_) *log_ << "[" << name << "] running\n";
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove_all(out_dir);
  fs::create_directories(out_dir);
  // Invalidate first so an interrupted stage is never taken as complete.
  stages.erase(name);
  save_manifest();
  json summary = run_body(name);
  const double secs = seconds_since(t0);

  json entry = json::object();
  entry["status"] = "ran";
  entry["seconds"] = secs;
  entry["inputs"] = in;
  entry["outputs"] = hash_tree(dir_, out_dir);
  entry["summary"] = summary;
  stages[name] = entry;
  manifest_["metrics"][name] = summary;
  save_manifest();
  if (log_) *log_ << "[" << name << "] done in " << secs << " s\n";
  return {name, false, secs};
}

std::vector<StageReport> Runner::run_all() {
  std::vector<StageReport> out;
  for (const auto& s : stage_names()) out.push_back(run_stage(s));
  return out;
}

json Runner::run_body(const std::string& s) {
  const fs::path out = dir_ / s;
  json summary = json::object();

  if (s == "phantom") {
    if (cfg_.phantom.kind == phantom::Kind::fragment) {
      const auto ph = phantom::generate_fragment(cfg_.phantom);
      phantom::save_fragment(out, ph);
      summary["ink_voxels"] = ph.truth.stats.ink_voxels;
      summary["ink_mean"] = ph.truth.stats.ink_mean;
      summary["surface_mean"] = ph.truth.stats.surface_mean;
    } else {
      const auto ph = phantom::generate_scroll(cfg_.phantom);
      phantom::save_scroll(out, ph);
      summary["ink_voxels"] = ph.truth.stats.ink_voxels;
    }
    return summary;
  }

  const phantom::PhantomSpec spec = read_phantom_spec(dir_);
  require_fragment(spec, s);

  if (s == "segment") {
    const auto grid = io::load_slice_stack(dir_ / "phantom" / "volume");
    const int z1 = cfg_.z1 < 0 ? grid.dims().nz - 1 : cfg_.z1;
    const auto seeds = truth_seeds(spec, cfg_.layer, cfg_.z0, cfg_.seed_count);
    const auto mesh = segmentation::trace_surface(grid, seeds, cfg_.spacing, cfg_.z0, z1, cfg_.trace);
    write_obj(out / "mesh.obj", mesh);
    summary["rows"] = mesh.rows;
    summary["cols"] = mesh.cols;
    summary["rms_to_truth"] = rms_to_truth(spec, cfg_.layer, mesh);
    write_json(out / "trace.json", summary);
    return summary;
  }

  if (s == "flatten") {
    const auto mesh = read_obj(dir_ / "segment" / "mesh.obj");
    const auto fm = unwrap::flatten_mesh(mesh, spec.voxel_size);
    write_obj(out / "mesh_uv.obj", fm.base);
    std::ostringstream scale;
    scale.precision(17);
    scale << fm.uv_scale;
    summary["uv_scale"] = fm.uv_scale;
    summary["max_area_deviation"] = fm.distortion.max_area_deviation();
    summary["max_angle_deviation"] = fm.distortion.max_angle_deviation();
    io::write_meta(out / "flatten.json", {{"uv_scale", scale.str()}});
    return summary;
  }

  if (s == "sample") {
    const auto grid = io::load_slice_stack(dir_ / "phantom" / "volume");
    const auto fm = load_flattened(dir_);
    const auto sv = unwrap::sample_surface_volume(grid, fm, cfg_.depth, cfg_.step, cfg_.px_per_voxel);
    unwrap::save_surface_volume(out / "surface_volume", sv);
    summary["width"] = sv.width;
    summary["height"] = sv.height;
    summary["depth"] = sv.depth;
    return summary;
  }

  if (s == "label") {
    if (cfg_.layer != 0)
      throw ConfigError("segment.layer", "labels come from the surface photo, which shows layer 0 only");
    const auto fm = load_flattened(dir_);
    const auto raster = unwrap::rasterize(fm, cfg_.px_per_voxel);
    const FloatImage photo = read_photo(dir_ / "phantom" / "ground_truth" / "photo.tif");
    const Affine2D uv_to_photo = phantom::read_affine(dir_ / "phantom" / "ground_truth" / "photo_transform.txt");
    const auto landmarks = truth_landmarks(spec, cfg_.layer, fm, raster, uv_to_photo, cfg_.landmark_grid);
    labeling::write_landmarks(out / "landmarks.txt", landmarks);
    const Affine2D t = labeling::estimate_affine(landmarks);
    const auto warped = labeling::warp_photo(photo, t, raster.width, raster.height);
    const auto labels = labeling::binarize(warped.image, warped.region, cfg_.threshold);
    labeling::save_labels(out / "labels", labels);
    io::write_png8(out / "aligned_photo.png", to_png8(warped.image));
    std::size_t ink = 0, region = 0;
    for (std::size_t i = 0; i < labels.ink.size(); ++i) {
      ink += labels.ink.data()[i] != 0;
      region += labels.region.data()[i] != 0;
    }
    summary["landmarks"] = landmarks.size();
    summary["threshold"] = labels.threshold;
    summary["ink_fraction"] = region ? static_cast<double>(ink) / static_cast<double>(region) : 0.0;
    return summary;
  }

  const auto sv = unwrap::load_surface_volume(dir_ / "sample" / "surface_volume");
  const auto rects = region_grid(sv.width, sv.height, cfg_.cv_rows, cfg_.cv_cols);
  const std::string surface = "layer" + std::to_string(cfg_.layer);

  if (s == "train") {
    const auto labels = labeling::load_labels(dir_ / "label" / "labels");
    std::vector<ink::Region> regions;
    for (std::size_t k = 0; k < rects.size(); ++k)
      regions.push_back({"region" + std::to_string(k), surface, &sv, &labels, rects[k]});
    const ink::FoldPlan plan = ink::make_folds(regions);
    json folds = json::array();
    std::size_t leaks_total = 0;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
      const auto& fold = plan.folds[f];
      const std::size_t leaks = ink::count_holdout_leaks(regions, fold.train, regions[fold.holdout], cfg_.patch,
                                                         cfg_.train.sample_stride, cfg_.train.seed);
      leaks_total += leaks;
      if (leaks) throw Error("train: " + std::to_string(leaks) + " training centres fall in holdout " +
                             regions[fold.holdout].id);
      if (log_) *log_ << "[train] fold " << f + 1 << "/" << plan.folds.size() << "\n";
      const auto res = ink::train(regions, fold.train, &regions[fold.holdout], cfg_.train, cfg_.patch, cfg_.hidden);
      const fs::path fd = out / ("fold" + std::to_string(f));
      fs::create_directories(fd);
      ink::save_model(fd / "model.bin", res.params);
      ink::write_loss_csv(fd / "loss.csv", res.trace);
      json j = json::object();
      j["holdout"] = regions[fold.holdout].id;
      j["rect"] = rect_json(regions[fold.holdout].rect);
      j["train_samples"] = res.train_samples;
      j["train_ink"] = res.train_ink;
      j["hygiene_checked"] = res.hygiene_checked;
      j["holdout_leaks"] = leaks;
      if (!res.trace.empty()) j["final_holdout_dice"] = res.trace.back().holdout_dice;
      folds.push_back(j);
    }
    if (cfg_.train_full) {
      std::vector<std::size_t> all(regions.size());
      for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
      const auto res = ink::train(regions, all, nullptr, cfg_.train, cfg_.patch, cfg_.hidden);
      fs::create_directories(out / "full");
      ink::save_model(out / "full" / "model.bin", res.params);
      ink::write_loss_csv(out / "full" / "loss.csv", res.trace);
    }
    json doc = json::object();
    doc["folds"] = folds;
    doc["holdout_leaks"] = leaks_total;
    write_json(out / "folds.json", doc);
    summary["folds"] = folds.size();
    summary["holdout_leaks"] = leaks_total;
    return summary;
  }

  if (s == "predict") {
    FloatImage prob(sv.width, sv.height, 0.0f);
    Mask mask(sv.width, sv.height, 0);
    for (std::size_t f = 0; f < rects.size(); ++f) {
      const auto params = ink::load_model(dir_ / "train" / ("fold" + std::to_string(f)) / "model.bin");
      const auto pred = ink::predict_image(params, sv, rects[f], cfg_.predict_stride);
      const auto& r = rects[f];
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
          prob.at(x, y) = pred.prob.at(x, y);
          mask.at(x, y) = pred.mask.at(x, y);
        }
    }
    io::write_tiff_float(out / "prob.tif", prob);
    io::write_mask_png(out / "mask.png", mask);
    io::write_png8(out / "prob.png", to_png8(prob));
    if (cfg_.train_full) {
      const auto params = ink::load_model(dir_ / "train" / "full" / "model.bin");
      const auto full = ink::predict_image(params, sv, {0, 0, sv.width, sv.height}, cfg_.predict_stride);
      io::write_tiff_float(out / "full_prob.tif", full.prob);
      io::write_png8(out / "full_prob.png", to_png8(full.prob));
    }
    std::size_t covered = 0;
    for (auto m : mask.data()) covered += m != 0;
    summary["predicted_pixels"] = covered;
    return summary;
  }

  if (s == "composite") {
    const FloatImage prob = io::read_tiff_float(dir_ / "predict" / "prob.tif");
    const auto tex = unwrap::texture_image(sv, cfg_.reduction, cfg_.texture_half_width);
    const FloatImage comp = unwrap::composite(tex, prob);
    io::write_tiff_float(out / "texture.tif", tex.image);
    io::write_png8(out / "texture.png", to_png8(tex.image));
    io::write_tiff_float(out / "composite.tif", comp);
    io::write_png8(out / "composite.png", to_png8(comp));
    summary["texture"] = tex.source;
    return summary;
  }

  if (s == "eval") {
    const auto labels = labeling::load_labels(dir_ / "label" / "labels");
    ink::PredictionImage merged{io::read_tiff_float(dir_ / "predict" / "prob.tif"),
                                io::read_mask_png(dir_ / "predict" / "mask.png")};
    std::vector<eval::FoldOutput> folds;
    std::vector<std::pair<std::string, eval::PixelMetrics>> rows;
    for (std::size_t f = 0; f < rects.size(); ++f) {
      ink::PredictionImage p{merged.prob, Mask(sv.width, sv.height, 0)};
      const auto& r = rects[f];
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) p.mask.at(x, y) = merged.mask.at(x, y);
      folds.push_back({surface, std::move(p), &labels});
    }
    const auto pooled = eval::compile_cross_validation(folds, cfg_.eval_threshold, cfg_.positive_is_ink);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      try {
        rows.emplace_back("fold" + std::to_string(f),
                          eval::pixel_metrics(folds[f].pred, labels, cfg_.eval_threshold, cfg_.positive_is_ink));
      } catch (const Error&) {
        // A fold with nothing to evaluate still counts towards nothing in the pool.
      }
    }
    rows.emplace_back("pooled", pooled);
    eval::write_pixel_metrics_csv(out / "pixel_metrics.csv", rows);
    std::string report = eval::pixel_metrics_table(rows);

    std::ostringstream ts;
    ts << "fold,metric,mean,std\n";
    ts.precision(9);
    for (std::size_t f = 0; f < rects.size(); ++f) {
      const auto trace = read_loss_csv(dir_ / "train" / ("fold" + std::to_string(f)) / "loss.csv");
      std::vector<std::pair<int, double>> loss, dice;
      for (const auto& r : trace) {
        loss.emplace_back(r.batch, r.loss);
        dice.emplace_back(r.batch, r.holdout_dice);
      }
      if (trace.size() < 2) continue;
      const auto [lm, ls] = eval::trace_stats(loss);
      const auto [dm, ds] = eval::trace_stats(dice);
      ts << f << ",loss," << lm << ',' << ls << '\n' << f << ",holdout_dice," << dm << ',' << ds << '\n';
    }
    io::write_text(out / "trace_stats.csv", ts.str());

    summary["pixel"] = pixel_json(pooled);
    if (cfg_.gt_transcription) {
      const auto gt = eval::parse_transcription(io::read_text(*cfg_.gt_transcription));
      const auto pr = eval::parse_transcription(io::read_text(*cfg_.pred_transcription));
      std::vector<std::pair<std::string, eval::CharMetrics>> crow{{"strict", eval::char_metrics(gt, pr, true)},
                                                                   {"lenient", eval::char_metrics(gt, pr, false)}};
      eval::write_char_metrics_csv(out / "char_metrics.csv", crow);
      report += "\n" + eval::char_metrics_table(crow);
      json cj = json::object();
      cj["gt_chars"] = crow[0].second.gt_chars;
      cj["matched"] = crow[0].second.matched;
      cj["false_chars"] = crow[0].second.false_chars;
      cj["fpr"] = crow[0].second.fpr;
      summary["char_strict"] = cj;
    }
    io::write_text(out / "report.txt", report);
    return summary;
  }

  throw ConfigError("", "unknown stage '" + s + "'");
}

}  // namespace vu::pipeline
