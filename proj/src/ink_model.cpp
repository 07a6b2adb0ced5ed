#include "vu/ink_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "vu/io.hpp"
#include "vu/parallel.hpp"

namespace vu::ink {

namespace {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

constexpr double kLeak = 0.01;
constexpr double kProbFloor = 1e-7;

template <class S>
struct Net {
  std::vector<Mat<S>> W;
  std::vector<Vec<S>> b;
};

template <class S>
Net<S> to_net(const ModelParams& p) {
  Net<S> n;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    n.W.push_back(p.weights[l].cast<S>());
    n.b.push_back(p.biases[l].cast<S>());
  }
  return n;
}

// Pre-activations per layer; the last entry holds the output logits.
template <class S>
std::vector<Mat<S>> forward_pass(const Net<S>& net, const Mat<S>& x) {
  std::vector<Mat<S>> z;
  z.reserve(net.W.size());
  Mat<S> a = x;
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    z.push_back((net.W[l] * a).colwise() + net.b[l]);
    if (l + 1 < net.W.size()) a = z.back().unaryExpr([](S v) { return v > 0 ? v : static_cast<S>(kLeak) * v; });
  }
  return z;
}

// Gradients of mean BCE over the batch columns.
template <class S>
Net<S> backward_pass(const Net<S>& net, const Mat<S>& x, const std::vector<Mat<S>>& z, const Vec<S>& y) {
  const std::size_t L = net.W.size();
  const auto B = static_cast<S>(x.cols());
  Net<S> g;
  g.W.resize(L);
  g.b.resize(L);
  // d(BCE)/d(logit) = sigmoid(z) - y.
  Mat<S> delta = z.back().unaryExpr([](S v) { return static_cast<S>(1) / (static_cast<S>(1) + std::exp(-v)); });
  delta.row(0) -= y.transpose();
  delta /= B;
  for (std::size_t l = L; l-- > 0;) {
    if (l == 0) g.W[l].noalias() = delta * x.transpose();
    else {
      const Mat<S> a = z[l - 1].unaryExpr([](S v) { return v > 0 ? v : static_cast<S>(kLeak) * v; });
      g.W[l].noalias() = delta * a.transpose();
    }
    g.b[l] = delta.rowwise().sum();
    if (l > 0) {
      Mat<S> prev = net.W[l].transpose() * delta;
      delta = prev.cwiseProduct(z[l - 1].unaryExpr([](S v) { return v > 0 ? static_cast<S>(1) : static_cast<S>(kLeak); }));
    }
  }
  return g;
}

// Numerically stable BCE on a logit.
double bce_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

void check_finite(std::span<const float> patch) {
  for (float v : patch)
    if (!std::isfinite(v)) throw Error("forward: patch contains a non-finite value");
}

}  // namespace

void Region::validate() const {
  if (!sv || !labels) throw Error("region '" + id + "': missing surface volume or labels");
  if (labels->ink.width() != sv->width || labels->ink.height() != sv->height)
    throw Error("region '" + id + "': label dimensions differ from the surface volume");
  if (rect.empty() || rect.x0 < 0 || rect.y0 < 0 || rect.x1 > sv->width || rect.y1 > sv->height)
    throw Error("region '" + id + "': rect lies outside the " + std::to_string(sv->width) + "x" +
                std::to_string(sv->height) + " surface");
}

FoldPlan make_folds(std::span<const Region> regions) {
  if (regions.size() < 2) throw Error("make_folds: need at least 2 regions");
  for (std::size_t i = 0; i < regions.size(); ++i)
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      if (regions[i].id == regions[j].id) throw Error("make_folds: duplicate region id '" + regions[i].id + "'");
      if (regions[i].surface_id == regions[j].surface_id && regions[i].rect.overlaps(regions[j].rect))
        throw Error("make_folds: regions '" + regions[i].id + "' and '" + regions[j].id + "' overlap");
    }
  FoldPlan plan;
  for (std::size_t h = 0; h < regions.size(); ++h) {
    Fold f;
    f.holdout = h;
    for (std::size_t i = 0; i < regions.size(); ++i)
      if (i != h) f.train.push_back(i);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

std::vector<Sample> extract_training_set(const Region& region, const PatchSpec& patch, int stride,
                                         std::uint64_t seed) {
  region.validate();
  if (stride < 1) throw Error("extract_training_set: stride must be >= 1");
  if (patch.shape.d > region.sv->depth)
    throw Error("extract_training_set: patch depth " + std::to_string(patch.shape.d) +
                " exceeds the surface volume depth " + std::to_string(region.sv->depth));
  const int c = region.sv->depth / 2;
  std::vector<Sample> out;
  for (int y = region.rect.y0; y < region.rect.y1; y += stride)
    for (int x = region.rect.x0; x < region.rect.x1; x += stride) {
      if (!region.labels->region.at(x, y) || !region.sv->is_valid(x, y, c)) continue;
      out.push_back({x, y, static_cast<std::uint8_t>(region.labels->ink.at(x, y) ? 1 : 0)});
    }
  if (out.empty()) throw Error("extract_training_set: region '" + region.id + "' has no usable pixels");
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void fill_patch(const unwrap::SurfaceVolume& sv, int x, int y, const PatchSpec& patch, float* out) {
  const auto& s = patch.shape;
  const int k0 = sv.depth / 2 - s.d / 2;
  if (k0 < 0 || k0 + s.d > sv.depth) throw Error("fill_patch: patch depth exceeds the surface volume");
  std::size_t idx = 0;
  for (int k = 0; k < s.d; ++k)
    for (int j = 0; j < s.h; ++j) {
      const int yy = y + j - s.h / 2;
      for (int i = 0; i < s.w; ++i) {
        const int xx = x + i - s.w / 2;
        out[idx++] = (xx >= 0 && yy >= 0 && xx < sv.width && yy < sv.height) ? sv.at(xx, yy, k0 + k) : 0.0f;
      }
    }
  if (!patch.normalize) return;
  const std::size_t n = s.count();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += out[i];
  mean /= static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) var += (out[i] - mean) * (out[i] - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) out[i] = sd > 1e-6 ? static_cast<float>((out[i] - mean) / sd) : 0.0f;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

void ModelParams::validate() const {
  if (layer_sizes.size() < 2) throw Error("model: need at least an input and an output layer");
  if (layer_sizes.back() != 1) throw Error("model: final layer width must be 1");
  if (static_cast<std::size_t>(layer_sizes.front()) != input_shape.count())
    throw Error("model: input width does not match the patch shape");
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size())
    throw Error("model: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1])
      throw Error("model: layer " + std::to_string(l) + " dimensions are inconsistent");
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (layer_sizes != o.layer_sizes || !(input_shape == o.input_shape) || normalize != o.normalize) return false;
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
  return true;
}

ModelParams zero_params(std::span<const int> layer_sizes, volume::PatchShape shape, bool normalize) {
  ModelParams p;
  p.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  p.input_shape = shape;
  p.normalize = normalize;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    if (layer_sizes[l] < 1 || layer_sizes[l + 1] < 1) throw Error("model: layer widths must be positive");
    p.weights.push_back(Eigen::MatrixXf::Zero(layer_sizes[l + 1], layer_sizes[l]));
    p.biases.push_back(Eigen::VectorXf::Zero(layer_sizes[l + 1]));
  }
  p.validate();
  return p;
}

ModelParams init_params(std::span<const int> layer_sizes, volume::PatchShape shape, bool normalize,
                        std::uint64_t seed) {
  ModelParams p = zero_params(layer_sizes, shape, normalize);
  std::mt19937_64 rng(seed);
  for (auto& w : p.weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    // Row-major fill so the draw order does not depend on storage order.
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<float>(u(rng));
  }
  return p;
}

double forward(const ModelParams& params, std::span<const float> patch) {
  params.validate();
  if (patch.size() != params.input_shape.count())
    throw Error("forward: patch has " + std::to_string(patch.size()) + " values, model expects " +
                std::to_string(params.input_shape.count()));
  check_finite(patch);
  const Net<float> net = to_net<float>(params);
  const Mat<float> x = Eigen::Map<const Mat<float>>(patch.data(), static_cast<Eigen::Index>(patch.size()), 1);
  return sigmoid(forward_pass(net, x).back()(0, 0));
}

double grad_check(const ModelParams& params, std::span<const float> patch, int label, std::uint64_t seed,
                  bool corrupt_backward) {
  params.validate();
  if (patch.size() != params.input_shape.count()) throw Error("grad_check: patch shape mismatch");
  check_finite(patch);
  Net<double> net = to_net<double>(params);
  Mat<double> x(static_cast<Eigen::Index>(patch.size()), 1);
  for (std::size_t i = 0; i < patch.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = patch[i];
  Vec<double> y(1);
  y(0) = label;
  Net<double> g = backward_pass(net, x, forward_pass(net, x), y);
  if (corrupt_backward)
    for (auto& w : g.W) w *= 1.1;

  // Flat parameter addressing: (layer, is_bias, index).
  struct Ref {
    std::size_t layer;
    bool bias;
    Eigen::Index index;
  };
  std::vector<Ref> refs;
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    for (Eigen::Index i = 0; i < net.W[l].size(); ++i) refs.push_back({l, false, i});
    for (Eigen::Index i = 0; i < net.b[l].size(); ++i) refs.push_back({l, true, i});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(refs.begin(), refs.end(), rng);
  if (refs.size() > 100) refs.resize(100);

  auto loss = [&]() { return bce_logit(forward_pass(net, x).back()(0, 0), label); };
  constexpr double h = 1e-4;
  double worst = 0;
  for (const auto& r : refs) {
    double& w = r.bias ? net.b[r.layer](r.index) : net.W[r.layer](r.index);
    const double analytic = r.bias ? g.b[r.layer](r.index) : g.W[r.layer](r.index);
    const double saved = w;
    w = saved + h;
    const double up = loss();
    w = saved - h;
    const double down = loss();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    // Floor keeps vanishing gradients from turning round-off into large ratios.
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-7);
    worst = std::max(worst, rel);
  }
  return worst;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0)) throw ConfigError("train.learning_rate", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
  if (balance && batch_size % 2) throw ConfigError("train.batch_size", "must be even when balance is on");
  if (total_batches < 1) throw ConfigError("train.total_batches", "must be positive");
  if (eval_every < 1) throw ConfigError("train.eval_every", "must be positive");
  if (sample_stride < 1) throw ConfigError("train.sample_stride", "must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum", "must lie in [0, 1)");
}

namespace {

struct PoolEntry {
  std::uint32_t region;
  Sample s;
};

std::vector<PoolEntry> build_pool(std::span<const Region> regions, std::span<const std::size_t> ids,
                                  const PatchSpec& patch, int stride, std::uint64_t seed) {
  std::vector<PoolEntry> pool;
  for (std::size_t id : ids) {
    if (id >= regions.size()) throw Error("train: region index out of range");
    // Each region draws its own stream so adding a region does not reshuffle the others.
    const auto samples = extract_training_set(regions[id], patch, stride, seed ^ (0x9e3779b97f4a7c15ULL * (id + 1)));
    for (const auto& s : samples) pool.push_back({static_cast<std::uint32_t>(id), s});
  }
  return pool;
}

std::size_t leaks_in(std::span<const Region> regions, const std::vector<PoolEntry>& pool, const Region& holdout) {
  std::size_t bad = 0;
  for (const auto& e : pool) {
    const Region& r = regions[e.region];
    if (r.surface_id == holdout.surface_id && holdout.rect.contains(e.s.x, e.s.y)) ++bad;
  }
  return bad;
}

struct HoldoutEval {
  std::vector<Sample> samples;
  const Region* region = nullptr;
};

void evaluate_holdout(const Net<float>& net, const HoldoutEval& h, const PatchSpec& patch, LossRecord& rec) {
  if (!h.region || h.samples.empty()) {
    rec.holdout_bce = rec.holdout_dice = rec.holdout_accuracy = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  const auto in = static_cast<Eigen::Index>(patch.shape.count());
  const Eigen::Index n = static_cast<Eigen::Index>(h.samples.size());
  Mat<float> x(in, n);
  for (Eigen::Index c = 0; c < n; ++c) fill_patch(*h.region->sv, h.samples[c].x, h.samples[c].y, patch, x.col(c).data());
  const Mat<float> z = forward_pass(net, x).back();
  double bce = 0, tp = 0, fp = 0, fn = 0, correct = 0;
  for (Eigen::Index c = 0; c < n; ++c) {
    const double y = h.samples[c].label, p = sigmoid(z(0, c));
    bce -= y * std::log(p) + (1 - y) * std::log(1 - p);
    const bool pred = p >= 0.5;
    tp += pred && y == 1;
    fp += pred && y == 0;
    fn += !pred && y == 1;
    correct += pred == (y == 1);
  }
  rec.holdout_bce = bce / n;
  rec.holdout_dice = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 1.0;
  rec.holdout_accuracy = correct / n;
}

}  // namespace

BatchSampler::BatchSampler(std::span<const std::uint8_t> labels, int batch_size, bool balance, std::uint64_t seed)
    : batch_size_(batch_size), balance_(balance), rng_(seed) {
  if (labels.empty()) throw Error("BatchSampler: no samples");
  if (batch_size < 1 || (balance && batch_size % 2)) throw Error("BatchSampler: invalid batch size");
  std::vector<std::uint32_t> ink, blank;
  for (std::uint32_t i = 0; i < labels.size(); ++i) (labels[i] ? ink : blank).push_back(i);
  if (!balance) {
    major_.resize(labels.size());
    std::iota(major_.begin(), major_.end(), 0u);
  } else {
    if (ink.empty() || blank.empty()) throw Error("BatchSampler: balancing needs both classes");
    const bool ink_minor = ink.size() <= blank.size();
    major_ = ink_minor ? blank : ink;
    minor_ = ink_minor ? ink : blank;
  }
  pos_ = major_.size();
}

void BatchSampler::next(std::vector<std::uint32_t>& batch) {
  batch.resize(static_cast<std::size_t>(batch_size_));
  auto walk = [&]() {
    if (pos_ == major_.size()) {
      std::shuffle(major_.begin(), major_.end(), rng_);
      pos_ = 0;
    }
    return major_[pos_++];
  };
  if (!balance_) {
    for (auto& b : batch) b = walk();
    return;
  }
  const int half = batch_size_ / 2;
  std::uniform_int_distribution<std::size_t> pick(0, minor_.size() - 1);
  for (int i = 0; i < half; ++i) batch[i] = walk();
  for (int i = half; i < batch_size_; ++i) batch[i] = minor_[pick(rng_)];
}

std::size_t count_holdout_leaks(std::span<const Region> regions, std::span<const std::size_t> train,
                                const Region& holdout, const PatchSpec& patch, int stride, std::uint64_t seed) {
  return leaks_in(regions, build_pool(regions, train, patch, stride, seed), holdout);
}

TrainResult train(std::span<const Region> regions, std::span<const std::size_t> train_ids, const Region* holdout,
                  const TrainConfig& cfg, const PatchSpec& patch, std::span<const int> hidden) {
  cfg.validate();
  if (train_ids.empty()) throw Error("train: no training regions");
  const auto pool = build_pool(regions, train_ids, patch, cfg.sample_stride, cfg.seed);

  TrainResult result;
  result.train_samples = pool.size();
  if (holdout) {
    holdout->validate();
    result.hygiene_checked = pool.size();
    const std::size_t leaks = leaks_in(regions, pool, *holdout);
    if (leaks > 0)
      throw Error("train: " + std::to_string(leaks) + " training patch centres fall inside holdout region '" +
                  holdout->id + "'");
  }

  std::vector<std::uint8_t> labels(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) labels[i] = pool[i].s.label;
  result.train_ink = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (cfg.balance && (result.train_ink == 0 || result.train_ink == pool.size()))
    throw Error("train: balanced batches need both ink and non-ink samples (ink " + std::to_string(result.train_ink) +
                ", non-ink " + std::to_string(pool.size() - result.train_ink) + ")");

  std::vector<int> sizes{static_cast<int>(patch.shape.count())};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  std::mt19937_64 rng(cfg.seed);
  result.params = init_params(sizes, patch.shape, patch.normalize, rng());
  Net<float> net = to_net<float>(result.params);
  Net<float> vel;
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    vel.W.push_back(Mat<float>::Zero(net.W[l].rows(), net.W[l].cols()));
    vel.b.push_back(Vec<float>::Zero(net.b[l].size()));
  }

  HoldoutEval heval;
  if (holdout) {
    heval.region = holdout;
    auto hs = extract_training_set(*holdout, patch, cfg.sample_stride, cfg.seed + 1);
    constexpr std::size_t kMaxEval = 2048;
    if (hs.size() > kMaxEval) {
      std::vector<Sample> sub;
      for (std::size_t i = 0; i < kMaxEval; ++i) sub.push_back(hs[i * hs.size() / kMaxEval]);
      hs.swap(sub);
    }
    heval.samples = std::move(hs);
  }

  BatchSampler sampler(labels, cfg.batch_size, cfg.balance, rng());

  const auto in = static_cast<Eigen::Index>(patch.shape.count());
  const float lr = static_cast<float>(cfg.learning_rate), mu = static_cast<float>(cfg.momentum);
  Mat<float> x(in, cfg.batch_size);
  Vec<float> y(cfg.batch_size);
  std::vector<std::uint32_t> batch(static_cast<std::size_t>(cfg.batch_size));
  double loss_acc = 0;
  int loss_n = 0;
  for (int step = 1; step <= cfg.total_batches; ++step) {
    sampler.next(batch);
    for (int c = 0; c < cfg.batch_size; ++c) {
      const PoolEntry& e = pool[batch[c]];
      fill_patch(*regions[e.region].sv, e.s.x, e.s.y, patch, x.col(c).data());
      y(c) = e.s.label;
    }
    const auto z = forward_pass(net, x);
    double loss = 0;
    for (int c = 0; c < cfg.batch_size; ++c) loss += bce_logit(z.back()(0, c), y(c));
    loss /= cfg.batch_size;
    if (!std::isfinite(loss)) {
      LossRecord r{step, loss, 0, 0, 0};
      result.trace.push_back(r);
      throw TrainingDiverged("train: loss became non-finite at batch " + std::to_string(step), result.trace);
    }
    loss_acc += loss;
    ++loss_n;
    const Net<float> g = backward_pass(net, x, z, y);
    for (std::size_t l = 0; l < net.W.size(); ++l) {
      vel.W[l] = mu * vel.W[l] + g.W[l];
      vel.b[l] = mu * vel.b[l] + g.b[l];
      net.W[l] -= lr * vel.W[l];
      net.b[l] -= lr * vel.b[l];
    }
    if (step % cfg.eval_every == 0 || step == cfg.total_batches) {
      LossRecord rec;
      rec.batch = step;
      rec.loss = loss_acc / loss_n;
      evaluate_holdout(net, heval, patch, rec);
      result.trace.push_back(rec);
      loss_acc = 0;
      loss_n = 0;
    }
  }
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    result.params.weights[l] = net.W[l];
    result.params.biases[l] = net.b[l];
  }
  return result;
}

PredictionImage predict_image(const ModelParams& params, const unwrap::SurfaceVolume& sv, const Rect& rect,
                              int stride) {
  params.validate();
  if (stride < 1) throw Error("predict_image: stride must be >= 1");
  if (rect.empty() || rect.x0 < 0 || rect.y0 < 0 || rect.x1 > sv.width || rect.y1 > sv.height)
    throw Error("predict_image: region lies outside the " + std::to_string(sv.width) + "x" +
                std::to_string(sv.height) + " surface volume");
  if (params.input_shape.d > sv.depth)
    throw Error("predict_image: model patch depth exceeds the surface volume depth");
  const PatchSpec patch{params.input_shape, params.normalize};
  const int c = sv.depth / 2;

  auto axis = [&](int lo, int hi) {
    std::vector<int> v;
    for (int t = lo; t < hi; t += stride) v.push_back(t);
    if (v.back() != hi - 1) v.push_back(hi - 1);
    return v;
  };
  const auto xs = axis(rect.x0, rect.x1), ys = axis(rect.y0, rect.y1);
  const Net<float> net = to_net<float>(params);
  const auto in = static_cast<Eigen::Index>(patch.shape.count());
  const float nan = std::numeric_limits<float>::quiet_NaN();

  // One batch per node row: the batch contents never depend on scheduling.
  std::vector<float> nodes(xs.size() * ys.size(), nan);
  parallel_for(ys.size(), [&](std::size_t r) {
    const int y = ys[r];
    std::vector<std::size_t> cols;
    for (std::size_t q = 0; q < xs.size(); ++q)
      if (sv.is_valid(xs[q], y, c)) cols.push_back(q);
    if (cols.empty()) return;
    Mat<float> x(in, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t q = 0; q < cols.size(); ++q) fill_patch(sv, xs[cols[q]], y, patch, x.col(q).data());
    const Mat<float> z = forward_pass(net, x).back();
    for (std::size_t q = 0; q < cols.size(); ++q) nodes[r * xs.size() + cols[q]] = static_cast<float>(sigmoid(z(0, q)));
  });

  PredictionImage out{FloatImage(sv.width, sv.height, 0.0f), Mask(sv.width, sv.height, 0)};
  parallel_for(static_cast<std::size_t>(rect.height()), [&](std::size_t jj) {
    const int y = rect.y0 + static_cast<int>(jj);
    const std::size_t r1 = std::lower_bound(ys.begin(), ys.end(), y) - ys.begin();
    const std::size_t r0 = ys[r1] == y ? r1 : r1 - 1;
    const double fy = r0 == r1 ? 0.0 : double(y - ys[r0]) / (ys[r1] - ys[r0]);
    std::vector<float> buf;
    for (int x = rect.x0; x < rect.x1; ++x) {
      if (!sv.is_valid(x, y, c)) continue;
      const std::size_t q1 = std::lower_bound(xs.begin(), xs.end(), x) - xs.begin();
      const std::size_t q0 = xs[q1] == x ? q1 : q1 - 1;
      const double fx = q0 == q1 ? 0.0 : double(x - xs[q0]) / (xs[q1] - xs[q0]);
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const float v[4] = {nodes[r0 * xs.size() + q0], nodes[r0 * xs.size() + q1], nodes[r1 * xs.size() + q0],
                          nodes[r1 * xs.size() + q1]};
      double acc = 0, wsum = 0;
      for (int k = 0; k < 4; ++k)
        if (w[k] > 0 && !std::isnan(v[k])) {
          acc += w[k] * v[k];
          wsum += w[k];
        }
      float p;
      if (wsum > 0) p = static_cast<float>(acc / wsum);
      else {
        buf.resize(patch.shape.count());
        fill_patch(sv, x, y, patch, buf.data());
        p = static_cast<float>(forward(params, buf));
      }
      out.prob.at(x, y) = p;
      out.mask.at(x, y) = 1;
    }
  });
  return out;
}

namespace {

constexpr char kMagic[8] = {'V', 'U', 'I', 'N', 'K', 'M', 'D', '1'};

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + 4 > s.size()) throw FormatError(path.string() + ": truncated model file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelParams& params) {
  params.validate();
  std::string s(kMagic, sizeof kMagic);
  put_u32(s, static_cast<std::uint32_t>(params.layer_sizes.size()));
  for (int n : params.layer_sizes) put_u32(s, static_cast<std::uint32_t>(n));
  put_u32(s, static_cast<std::uint32_t>(params.input_shape.w));
  put_u32(s, static_cast<std::uint32_t>(params.input_shape.h));
  put_u32(s, static_cast<std::uint32_t>(params.input_shape.d));
  put_u32(s, params.normalize ? 1u : 0u);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) put_u32(s, std::bit_cast<std::uint32_t>(w(r, c)));
    for (Eigen::Index r = 0; r < params.biases[l].size(); ++r)
      put_u32(s, std::bit_cast<std::uint32_t>(params.biases[l](r)));
  }
  io::write_text(path, s);
}

ModelParams load_model(const std::filesystem::path& path) {
  const std::string s = io::read_text(path);
  if (s.size() < sizeof kMagic || !std::equal(kMagic, kMagic + sizeof kMagic, s.begin()))
    throw FormatError(path.string() + ": not a model file (bad magic)");
  std::size_t pos = sizeof kMagic;
  const std::uint32_t n = get_u32(s, pos, path);
  if (n < 2 || n > 64) throw FormatError(path.string() + ": implausible layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < n; ++i) sizes.push_back(static_cast<int>(get_u32(s, pos, path)));
  volume::PatchShape shape;
  shape.w = static_cast<int>(get_u32(s, pos, path));
  shape.h = static_cast<int>(get_u32(s, pos, path));
  shape.d = static_cast<int>(get_u32(s, pos, path));
  const bool normalize = get_u32(s, pos, path) != 0;
  ModelParams p;
  try {
    p = zero_params(sizes, shape, normalize);
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    auto& w = p.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = std::bit_cast<float>(get_u32(s, pos, path));
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r)
      p.biases[l](r) = std::bit_cast<float>(get_u32(s, pos, path));
  }
  if (pos != s.size()) throw FormatError(path.string() + ": trailing bytes after the weights");
  return p;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace) {
  std::ostringstream out;
  out.precision(9);
  out << "batch,loss,holdout_bce,holdout_dice,holdout_accuracy\n";
  for (const auto& r : trace)
    out << r.batch << ',' << r.loss << ',' << r.holdout_bce << ',' << r.holdout_dice << ',' << r.holdout_accuracy
        << '\n';
  io::write_text(path, out.str());
}

}  // namespace vu::ink
