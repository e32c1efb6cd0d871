#pragma once

#include <vector>

#include "evbox/common.hpp"

namespace evbox {

// Center-parameterized rectangle in image pixels. Corner form is used only at
// file-format boundaries.
struct Box {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  double x_min() const { return cx - w / 2; }
  double y_min() const { return cy - h / 2; }
  double x_max() const { return cx + w / 2; }
  double y_max() const { return cy + h / 2; }
  double area() const { return w * h; }

  static Box from_corner(double x_min, double y_min, double w, double h) {
    return Box{x_min + w / 2, y_min + h / 2, w, h};
  }
};

// Offsets of a target box relative to a reference box: translation scaled by
// the reference size plus log size ratios.
struct BoxDelta {
  double tx = 0;
  double ty = 0;
  double tw = 0;
  double th = 0;
};

struct Detection {
  Box box;
  double score = 0;
};

// Intersection over union, in [0,1]. Disjoint boxes give 0.
double iou(const Box& a, const Box& b);

// Delta of `target` relative to `reference`. Throws BoxError when the target
// has non-positive dimensions (the reference is assumed valid).
BoxDelta encode_delta(const Box& target, const Box& reference);

// Algebraic inverse of encode_delta. tw/th are clamped to [-4, 4] before
// exponentiation so untrained regressors cannot blow boxes up.
Box decode_delta(const BoxDelta& delta, const Box& reference);

// Clamps the box to [0,imgW]x[0,imgH] in corner form. The result is at least
// 1x1; a box fully outside ends up as a 1x1 sliver at the nearest border.
Box clip_to_image(const Box& box, int img_w, int img_h);

// Greedy non-maximum suppression. Candidates are visited in descending score
// order (ties: smaller input index first); a kept box suppresses all remaining
// boxes with IoU strictly above `threshold`. Output preserves that order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double threshold);

// Same suppression rule, but returns indices into `dets` and stops early once
// `max_keep` boxes survive. nms(d, t) == gather(d, nms_keep_indices(d, t, n))
// for any n >= output size.
std::vector<int> nms_keep_indices(const std::vector<Detection>& dets, double threshold,
                                  int max_keep);

}  // namespace evbox
