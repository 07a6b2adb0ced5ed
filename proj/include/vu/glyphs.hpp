#pragma once

#include <string_view>
#include <utility>

#include "vu/grid.hpp"

namespace vu::phantom {

/// Draws `text` left to right, one 5x7 dot-matrix glyph per cell of `cell`
/// pixels (width, height). Supported: A-Z, 0-9 and space. Each dot becomes a
/// scale x scale block; scale 0 picks the largest that fits the cell. The
/// glyph is centered in its cell.
Mask render_glyph_mask(std::string_view text, std::pair<int, int> cell, int scale = 0);

bool glyph_supported(char c) noexcept;

}  // namespace vu::phantom
