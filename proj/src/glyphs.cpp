#include "vu/glyphs.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "vu/error.hpp"

namespace vu::phantom {
namespace {

using Glyph = std::array<const char*, 7>;

// clang-format off
constexpr std::array<Glyph, 26> kLetters = {{
  {".XXX.", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"},  // A
  {"XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."},  // B
  {".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."},  // C
  {"XXXX.", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXX."},  // D
  {"XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"},  // E
  {"XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."},  // F
  {".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"},  // G
  {"X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"},  // H
  {"..X..", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."},  // I
  {"..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."},  // J
  {"X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"},  // K
  {"X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"},  // L
  {"X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"},  // M
  {"X...X", "X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X"},  // N
  {".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."},  // O
  {"XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."},  // P
  {".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"},  // Q
  {"XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"},  // R
  {".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."},  // S
  {"XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."},  // T
  {"X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."},  // U
  {"X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."},  // V
  {"X...X", "X...X", "X...X", "X.X.X", "X.X.X", "X.X.X", ".X.X."},  // W
  {"X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"},  // X
  {"X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."},  // Y
  {"XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"},  // Z
}};

constexpr std::array<Glyph, 10> kDigits = {{
  {".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."},  // 0
  {"..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."},  // 1
  {".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"},  // 2
  {"XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."},  // 3
  {"...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."},  // 4
  {"XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."},  // 5
  {"..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."},  // 6
  {"XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."},  // 7
  {".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."},  // 8
  {".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."},  // 9
}};

constexpr Glyph kSpace = {".....", ".....", ".....", ".....", ".....", ".....", "....."};
// clang-format on

const Glyph& glyph_for(char c) {
  if (c >= 'A' && c <= 'Z') return kLetters[static_cast<std::size_t>(c - 'A')];
  if (c >= '0' && c <= '9') return kDigits[static_cast<std::size_t>(c - '0')];
  if (c == ' ') return kSpace;
  throw Error(std::string("unsupported glyph character '") + c + "'");
}

}  // namespace

bool glyph_supported(char c) noexcept { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == ' '; }

Mask render_glyph_mask(std::string_view text, std::pair<int, int> cell, int scale) {
  const auto [cw, ch] = cell;
  if (cw < 5 || ch < 7) throw Error("render_glyph_mask: cell must be at least 5x7");
  if (scale == 0) scale = std::min(cw / 5, ch / 7);
  if (scale < 1 || 5 * scale > cw || 7 * scale > ch) throw Error("render_glyph_mask: glyph scale does not fit the cell");
  for (char c : text) (void)glyph_for(c);

  Mask mask(static_cast<int>(text.size()) * cw, ch);
  const int ox = (cw - 5 * scale) / 2, oy = (ch - 7 * scale) / 2;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Glyph& g = glyph_for(text[i]);
    const int x0 = static_cast<int>(i) * cw + ox;
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (g[static_cast<std::size_t>(row)][col] != 'X') continue;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) mask.at(x0 + col * scale + dx, oy + row * scale + dy) = 1;
      }
    }
  }
  return mask;
}

}  // namespace vu::phantom
