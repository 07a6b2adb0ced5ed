#include "vu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vu/error.hpp"
#include "vu/io.hpp"

namespace vu::eval {

namespace {

constexpr double kClamp = 1e-7;

struct Accumulator {
  Confusion c;
  double bce = 0;

  void add(double p, bool y, double threshold) {
    const double q = std::clamp(p, kClamp, 1.0 - kClamp);
    bce -= y ? std::log(q) : std::log(1.0 - q);
    const bool hit = p >= threshold;
    if (hit && y) ++c.tp;
    else if (hit) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }

  PixelMetrics finish() const {
    if (c.total() == 0) throw Error("pixel metrics: evaluation mask is empty");
    PixelMetrics m;
    m.counts = c;
    m.bce = bce / static_cast<double>(c.total());
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    m.dice = denom > 0 ? 2.0 * c.tp / denom : 1.0;
    if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    m.fpr = c.fp + c.tn > 0 ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
    return m;
  }
};

void check_dims(const ink::PredictionImage& pred, const labeling::LabelImage& label) {
  if (pred.prob.width() != label.ink.width() || pred.prob.height() != label.ink.height() ||
      pred.mask.width() != pred.prob.width() || label.region.width() != label.ink.width() ||
      pred.mask.height() != pred.prob.height() || label.region.height() != label.ink.height())
    throw Error("pixel metrics: prediction and label dimensions differ");
}

void accumulate(Accumulator& acc, const ink::PredictionImage& pred, const labeling::LabelImage& label,
                double threshold, bool positive_is_ink) {
  check_dims(pred, label);
  for (std::size_t k = 0; k < pred.prob.data().size(); ++k) {
    if (!pred.mask.data()[k] || !label.region.data()[k]) continue;
    const double p = pred.prob.data()[k];
    const bool ink = label.ink.data()[k] != 0;
    if (positive_is_ink) acc.add(p, ink, threshold);
    else acc.add(1.0 - p, !ink, 1.0 - threshold);
  }
}

}  // namespace

PixelMetrics pixel_metrics(const ink::PredictionImage& pred, const labeling::LabelImage& label, double threshold,
                           bool positive_is_ink) {
  Accumulator acc;
  accumulate(acc, pred, label, threshold, positive_is_ink);
  return acc.finish();
}

double dice(const Mask& a, const Mask& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw Error("dice: mask dimensions differ");
  std::size_t inter = 0, sa = 0, sb = 0;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    const bool x = a.data()[k] != 0, y = b.data()[k] != 0;
    inter += x && y;
    sa += x;
    sb += y;
  }
  return sa + sb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

PixelMetrics compile_cross_validation(std::span<const FoldOutput> folds, double threshold, bool positive_is_ink) {
  if (folds.empty()) throw Error("compile_cross_validation: no folds");
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (!folds[i].label) throw Error("compile_cross_validation: fold without labels");
    check_dims(folds[i].pred, *folds[i].label);
    for (std::size_t j = 0; j < i; ++j) {
      if (folds[i].surface_id != folds[j].surface_id) continue;
      const auto& a = folds[i];
      const auto& b = folds[j];
      if (a.pred.mask.width() != b.pred.mask.width() || a.pred.mask.height() != b.pred.mask.height())
        throw Error("compile_cross_validation: folds on surface '" + a.surface_id + "' have different dimensions");
      for (std::size_t k = 0; k < a.pred.mask.data().size(); ++k)
        if (a.pred.mask.data()[k] && a.label->region.data()[k] && b.pred.mask.data()[k] && b.label->region.data()[k])
          throw Error("compile_cross_validation: folds " + std::to_string(j) + " and " + std::to_string(i) +
                      " overlap on surface '" + a.surface_id + "'");
    }
  }
  Accumulator acc;
  for (const auto& f : folds) accumulate(acc, f.pred, *f.label, threshold, positive_is_ink);
  return acc.finish();
}

std::pair<double, double> trace_stats(std::span<const std::pair<int, double>> series) {
  if (series.size() < 2) throw Error("trace_stats: need at least 2 samples");
  int max_batch = series.front().first;
  for (const auto& s : series) max_batch = std::max(max_batch, s.first);
  const double half = max_batch / 2.0;
  double sum = 0;
  std::size_t n = 0;
  for (const auto& s : series)
    if (s.first > half) {
      sum += s.second;
      ++n;
    }
  if (n == 0) throw Error("trace_stats: no samples in the second half");
  const double mean = sum / static_cast<double>(n);
  double ss = 0;
  for (const auto& s : series)
    if (s.first > half) ss += (s.second - mean) * (s.second - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n))};
}

std::string to_utf8(char32_t c) {
  std::string s;
  if (c < 0x80) s.push_back(static_cast<char>(c));
  else if (c < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (c >> 6)));
    s.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    s.push_back(static_cast<char>(0xE0 | (c >> 12)));
    s.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xF0 | (c >> 18)));
    s.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
  return s;
}

namespace {

std::vector<char32_t> decode_utf8(const std::string& s, int lineno) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = b < 0x80 ? 1 : (b >> 5) == 6 ? 2 : (b >> 4) == 14 ? 3 : (b >> 3) == 30 ? 4 : 0;
    if (len == 0 || i + len > s.size())
      throw FormatError("transcription line " + std::to_string(lineno) + ": invalid UTF-8");
    char32_t c = len == 1 ? b : b & (0x7F >> len);
    for (int k = 1; k < len; ++k) {
      const auto cont = static_cast<unsigned char>(s[i + k]);
      if ((cont & 0xC0) != 0x80) throw FormatError("transcription line " + std::to_string(lineno) + ": invalid UTF-8");
      c = (c << 6) | (cont & 0x3F);
    }
    out.push_back(c);
    i += len;
  }
  return out;
}

bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\r'; }
bool is_reserved(char32_t c) { return c == '.' || c == '(' || c == ')' || c == '[' || c == ']' || c == '#'; }

}  // namespace

Transcription parse_transcription(const std::string& text) {
  Transcription t;
  std::istringstream in(text);
  std::string raw;
  std::string layer;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::vector<char32_t> cs = decode_utf8(raw, lineno);
    std::erase_if(cs, is_space);
    if (cs.empty()) continue;
    if (cs.front() == '#') {
      std::string body = raw.substr(raw.find('#') + 1);
      std::istringstream words(body);
      std::string kw, name;
      if (words >> kw && kw == "layer" && words >> name) layer = name;
      continue;
    }
    auto fail = [&](const std::string& why) {
      throw FormatError("transcription line " + std::to_string(lineno) + ": " + why);
    };
    std::size_t b = 0, e = cs.size();
    if (cs[b] == ']') ++b;
    if (e > b && cs[e - 1] == '[') --e;
    TranscriptionLine line;
    line.layer = layer;
    for (std::size_t i = b; i < e; ++i) {
      const char32_t c = cs[i];
      if (c == '.') line.tokens.push_back({Token::Kind::trace, 0});
      else if (c == '(') {
        if (i + 2 >= e || is_reserved(cs[i + 1]) || cs[i + 2] != ')')
          fail("'(' must enclose exactly one letter, as in (x)");
        line.tokens.push_back({Token::Kind::uncertain, cs[i + 1]});
        i += 2;
      } else if (c == ')') fail("unbalanced ')'");
      else if (c == '[' || c == ']') fail("line delimiters ']' and '[' may only open and close a line");
      else if (c == '#') fail("unexpected '#'");
      else line.tokens.push_back({Token::Kind::certain, c});
    }
    if (line.tokens.empty()) fail("line has no tokens");
    t.lines.push_back(std::move(line));
  }
  if (t.lines.empty()) throw FormatError("transcription has no lines");
  return t;
}

namespace {

// Costs in quarter units so ties compare exactly.
int sub_cost(const Token& g, const Token& p) {
  if (g.kind == Token::Kind::trace || p.kind == Token::Kind::trace) return 1;
  return g.ch == p.ch ? 0 : 4;
}

struct LineScore {
  std::size_t matched = 0, false_chars = 0;
};

LineScore score_line(const std::vector<Token>& g, const std::vector<Token>& p) {
  const std::size_t n = g.size(), m = p.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(4 * i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(4 * j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + sub_cost(g[i - 1], p[j - 1]), at(i - 1, j) + 4, at(i, j - 1) + 4});
  LineScore s;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + sub_cost(g[i - 1], p[j - 1])) {
      const Token &a = g[i - 1], &b = p[j - 1];
      if (a.is_char() && b.is_char()) {
        if (a.ch == b.ch) ++s.matched;
        else ++s.false_chars;
      }
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 4) {
      --i;  // gt token left unmatched
    } else {
      if (p[j - 1].is_char()) ++s.false_chars;  // predicted letter with nothing under it
      --j;
    }
  }
  return s;
}

}  // namespace

CharMetrics char_metrics(const Transcription& gt, const Transcription& pred, bool strict) {
  if (gt.lines.size() != pred.lines.size())
    throw Error("char_metrics: ground truth has " + std::to_string(gt.lines.size()) + " lines, prediction has " +
                std::to_string(pred.lines.size()));
  CharMetrics cm;
  for (std::size_t l = 0; l < gt.lines.size(); ++l) {
    const auto& g = gt.lines[l].tokens;
    std::vector<Token> p = pred.lines[l].tokens;
    if (!strict) std::erase_if(p, [](const Token& t) { return t.kind == Token::Kind::uncertain; });
    cm.gt_chars += static_cast<std::size_t>(std::count_if(g.begin(), g.end(), [](const Token& t) { return t.is_char(); }));
    const LineScore s = score_line(g, p);
    cm.matched += s.matched;
    cm.false_chars += s.false_chars;
  }
  if (cm.gt_chars > 0) cm.recall = static_cast<double>(cm.matched) / static_cast<double>(cm.gt_chars);
  cm.fpr = static_cast<double>(cm.false_chars) / static_cast<double>(std::max<std::size_t>(1, cm.matched + cm.false_chars));
  return cm;
}

namespace {

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string fmt(const std::optional<double>& v, int prec = 4) { return v ? fmt(*v, prec) : "NA"; }

}  // namespace

void write_pixel_metrics_csv(const std::filesystem::path& path,
                             std::span<const std::pair<std::string, PixelMetrics>> rows) {
  std::ostringstream out;
  out << "name,bce,dice,recall,fpr,tp,fp,fn,tn\n";
  for (const auto& [name, m] : rows)
    out << name << ',' << fmt(m.bce, 6) << ',' << fmt(m.dice, 6) << ',' << fmt(m.recall, 6) << ',' << fmt(m.fpr, 6)
        << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.fn << ',' << m.counts.tn << '\n';
  io::write_text(path, out.str());
}

std::string pixel_metrics_table(std::span<const std::pair<std::string, PixelMetrics>> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s\n", "", "BCE", "Dice", "Recall", "FPR");
  out << line;
  for (const auto& [name, m] : rows) {
    std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s\n", name.c_str(), fmt(m.bce).c_str(), fmt(m.dice).c_str(),
                  fmt(m.recall).c_str(), fmt(m.fpr).c_str());
    out << line;
  }
  return out.str();
}

void write_char_metrics_csv(const std::filesystem::path& path,
                            std::span<const std::pair<std::string, CharMetrics>> rows) {
  std::ostringstream out;
  out << "name,gt_chars,matched,false_chars,recall,fpr\n";
  for (const auto& [name, m] : rows)
    out << name << ',' << m.gt_chars << ',' << m.matched << ',' << m.false_chars << ',' << fmt(m.recall, 6) << ','
        << fmt(m.fpr, 6) << '\n';
  io::write_text(path, out.str());
}

std::string char_metrics_table(std::span<const std::pair<std::string, CharMetrics>> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %8s %8s\n", "", "GT chars", "Recall", "FPR");
  out << line;
  for (const auto& [name, m] : rows) {
    std::snprintf(line, sizeof line, "%-16s %10zu %8s %8s\n", name.c_str(), m.gt_chars, fmt(m.recall, 2).c_str(),
                  fmt(m.fpr, 2).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace vu::eval
