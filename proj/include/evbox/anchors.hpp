#pragma once

#include <vector>

#include "evbox/boxgeom.hpp"

namespace evbox {

// Fixed grid of reference boxes laid over the image. `scales` are square side
// lengths in pixels; `ratios` are w:h aspect ratios applied area-preserving.
struct AnchorSpec {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<double> scales;
  std::vector<double> ratios;
  int image_w = 0;
  int image_h = 0;
};

// One anchor per (cell, scale, ratio), centered on the cell center, ordered
// row-major over cells, then by scale, then by ratio. Anchors may extend
// beyond the image borders; they are not clipped here.
std::vector<Box> generate_anchors(const AnchorSpec& spec);

}  // namespace evbox
