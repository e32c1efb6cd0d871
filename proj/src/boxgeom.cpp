#include "evbox/boxgeom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace evbox {

double iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x_min(), b.x_min());
  const double iy0 = std::max(a.y_min(), b.y_min());
  const double ix1 = std::min(a.x_max(), b.x_max());
  const double iy1 = std::min(a.y_max(), b.y_max());
  const double iw = ix1 - ix0;
  const double ih = iy1 - iy0;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

BoxDelta encode_delta(const Box& target, const Box& reference) {
  if (target.w <= 0 || target.h <= 0) {
    throw BoxError("encode_delta: target box has non-positive size (w=" +
                   std::to_string(target.w) + ", h=" + std::to_string(target.h) + ")");
  }
  BoxDelta d;
  d.tx = (target.cx - reference.cx) / reference.w;
  d.ty = (target.cy - reference.cy) / reference.h;
  d.tw = std::log(target.w / reference.w);
  d.th = std::log(target.h / reference.h);
  return d;
}

Box decode_delta(const BoxDelta& delta, const Box& reference) {
  constexpr double kLogClamp = 4.0;
  Box b;
  b.cx = delta.tx * reference.w + reference.cx;
  b.cy = delta.ty * reference.h + reference.cy;
  b.w = reference.w * std::exp(std::clamp(delta.tw, -kLogClamp, kLogClamp));
  b.h = reference.h * std::exp(std::clamp(delta.th, -kLogClamp, kLogClamp));
  return b;
}

namespace {

// Clamp one axis to [0, limit] keeping at least 1 pixel of extent.
void clip_axis(double lo, double hi, double limit, double* out_lo, double* out_hi) {
  double a = std::clamp(lo, 0.0, limit);
  double b = std::clamp(hi, 0.0, limit);
  if (b - a < 1.0) {
    double c = std::clamp((a + b) / 2, 0.5, limit - 0.5);
    a = c - 0.5;
    b = c + 0.5;
  }
  *out_lo = a;
  *out_hi = b;
}

}  // namespace

Box clip_to_image(const Box& box, int img_w, int img_h) {
  double x0, x1, y0, y1;
  clip_axis(box.x_min(), box.x_max(), static_cast<double>(img_w), &x0, &x1);
  clip_axis(box.y_min(), box.y_max(), static_cast<double>(img_h), &y0, &y1);
  return Box{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

std::vector<int> nms_keep_indices(const std::vector<Detection>& dets, double threshold,
                                  int max_keep) {
  const int n = static_cast<int>(dets.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });

  std::vector<char> suppressed(n, 0);
  std::vector<int> kept;
  for (int oi = 0; oi < n; ++oi) {
    const int i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    if (static_cast<int>(kept.size()) >= max_keep) break;
    for (int oj = oi + 1; oj < n; ++oj) {
      const int j = order[oj];
      if (suppressed[j]) continue;
      if (iou(dets[i].box, dets[j].box) > threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double threshold) {
  std::vector<int> kept =
      nms_keep_indices(dets, threshold, std::numeric_limits<int>::max());
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (int i : kept) out.push_back(dets[i]);
  return out;
}

}  // namespace evbox
