#include "toothdet/geometry/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace toothdet::geom {

std::array<double, 64> PointSet32::flatten() const {
  std::array<double, 64> flat;
  for (int s = 0; s < 16; ++s) {
    flat[2 * s] = upper[s].x;
    flat[2 * s + 1] = upper[s].y;
    flat[32 + 2 * s] = lower[s].x;
    flat[32 + 2 * s + 1] = lower[s].y;
  }
  return flat;
}

PointSet32 PointSet32::from_flat(const std::array<double, 64>& flat) {
  PointSet32 ps;
  for (int s = 0; s < 16; ++s) {
    ps.upper[s] = {flat[2 * s], flat[2 * s + 1]};
    ps.lower[s] = {flat[32 + 2 * s], flat[32 + 2 * s + 1]};
  }
  return ps;
}

double iou(const Box& a, const Box& b) {
  // Overlap written as min(half-width sum - center gap, w_a, w_b): exact for
  // identical boxes, so iou(a, a) is 1.0 with no rounding slack.
  const double ix = std::min({(a.w + b.w) / 2 - std::fabs(a.cx - b.cx), a.w,
                              b.w});
  const double iy = std::min({(a.h + b.h) / 2 - std::fabs(a.cy - b.cy), a.h,
                              b.h});
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

std::array<double, 64> offset_target(const PointSet32& estimated,
                                     const PointSet32& ground_truth) {
  const auto est = estimated.flatten();
  const auto gt = ground_truth.flatten();
  std::array<double, 64> off;
  for (int i = 0; i < 64; ++i) off[i] = gt[i] - est[i];
  return off;
}

std::array<double, 15> neighbor_distances(
    const std::array<Point2, 16>& arch) {
  std::array<double, 15> d;
  for (int i = 0; i < 15; ++i)
    d[i] = std::hypot(arch[i + 1].x - arch[i].x, arch[i + 1].y - arch[i].y);
  return d;
}

Box box_from_prediction(const Point2& center,
                        const std::array<double, 2>& offset,
                        const std::array<double, 2>& size, bool* clamped) {
  bool hit = false;
  double w = size[0];
  double h = size[1];
  if (w < kMinBoxExtent) {
    w = kMinBoxExtent;
    hit = true;
  }
  if (h < kMinBoxExtent) {
    h = kMinBoxExtent;
    hit = true;
  }
  if (clamped != nullptr) *clamped = hit;
  return {center.x + offset[0], center.y + offset[1], w, h};
}

}  // namespace toothdet::geom
