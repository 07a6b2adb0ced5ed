#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vu/ink_model.hpp"
#include "vu/labeling.hpp"

namespace vu::eval {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct PixelMetrics {
  double bce = 0.0;
  double dice = 0.0;
  std::optional<double> recall;  // absent when there are no positive labels
  double fpr = 0.0;              // 0 when there are no negative labels
  Confusion counts;
};

/// Metrics over label.region AND pred.mask. With positive_is_ink false the
/// non-ink class is scored as the positive one.
PixelMetrics pixel_metrics(const ink::PredictionImage& pred, const labeling::LabelImage& label,
                           double threshold = 0.5, bool positive_is_ink = true);

/// Binary mask Dice: 2|A and B| / (|A| + |B|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);

struct FoldOutput {
  std::string surface_id;
  ink::PredictionImage pred;
  const labeling::LabelImage* label = nullptr;
};

/// Pools every evaluated pixel of every fold, then scores once.
PixelMetrics compile_cross_validation(std::span<const FoldOutput> folds, double threshold = 0.5,
                                      bool positive_is_ink = true);

/// Mean and population standard deviation over entries with batch > max_batch / 2.
std::pair<double, double> trace_stats(std::span<const std::pair<int, double>> series);

struct Token {
  enum class Kind { trace, certain, uncertain };
  Kind kind = Kind::trace;
  char32_t ch = 0;
  bool operator==(const Token&) const = default;
  bool is_char() const { return kind != Kind::trace; }
};

struct TranscriptionLine {
  std::string layer;
  std::vector<Token> tokens;
};

struct Transcription {
  std::vector<TranscriptionLine> lines;
};

/// One text line per row: "." trace, bare letter certain, "(x)" uncertain,
/// optional leading "]" and trailing "[". "# layer <name>" rows set the layer;
/// other '#' rows and blank rows are ignored.
Transcription parse_transcription(const std::string& text);

struct CharMetrics {
  std::size_t gt_chars = 0;
  std::size_t matched = 0;
  std::size_t false_chars = 0;
  std::optional<double> recall;  // absent when gt has no characters
  double fpr = 0.0;
};

/// Per-line minimum edit alignment (letter substitution 0/1, trace 0.25
/// against anything, indel 1); ties prefer the diagonal, then a gt deletion.
CharMetrics char_metrics(const Transcription& gt, const Transcription& pred, bool strict = true);

std::string to_utf8(char32_t c);

void write_pixel_metrics_csv(const std::filesystem::path& path,
                             std::span<const std::pair<std::string, PixelMetrics>> rows);
std::string pixel_metrics_table(std::span<const std::pair<std::string, PixelMetrics>> rows);
void write_char_metrics_csv(const std::filesystem::path& path,
                            std::span<const std::pair<std::string, CharMetrics>> rows);
std::string char_metrics_table(std::span<const std::pair<std::string, CharMetrics>> rows);

}  // namespace vu::eval
