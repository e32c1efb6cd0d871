#include "evbox/anchors.hpp"

#include <cmath>

namespace evbox {

std::vector<Box> generate_anchors(const AnchorSpec& spec) {
  if (spec.grid_w < 1 || spec.grid_h < 1 || spec.scales.empty() || spec.ratios.empty() ||
      spec.image_w < 1 || spec.image_h < 1) {
    throw ConfigError("generate_anchors: anchor spec incomplete");
  }
  const double pitch_x = static_cast<double>(spec.image_w) / spec.grid_w;
  const double pitch_y = static_cast<double>(spec.image_h) / spec.grid_h;

  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(spec.grid_w) * spec.grid_h * spec.scales.size() *
                  spec.ratios.size());
  for (int gy = 0; gy < spec.grid_h; ++gy) {
    for (int gx = 0; gx < spec.grid_w; ++gx) {
      const double cx = (gx + 0.5) * pitch_x;
      const double cy = (gy + 0.5) * pitch_y;
      for (double s : spec.scales) {
        for (double r : spec.ratios) {
          // w/h = r with w*h = s^2.
          const double w = s * std::sqrt(r);
          const double h = s / std::sqrt(r);
          anchors.push_back(Box{cx, cy, w, h});
        }
      }
    }
  }
  return anchors;
}

}  // namespace evbox
