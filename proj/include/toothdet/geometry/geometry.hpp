#pragma once

#include <array>

namespace toothdet::geom {

/// Canonical canvas every image is resampled onto before any processing.
inline constexpr int kCanvasW = 768;
inline constexpr int kCanvasH = 512;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Center + extents form; w, h > 0. Corner form exists only inside iou().
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
};

/// 16 upper + 16 lower tooth centers, each arch ordered left to right in
/// image coordinates. Flattened layout: (x,y) pairs, upper slots 0..15 then
/// lower slots 0..15.
struct PointSet32 {
  std::array<Point2, 16> upper;
  std::array<Point2, 16> lower;

  std::array<double, 64> flatten() const;
  static PointSet32 from_flat(const std::array<double, 64>& flat);
};

/// Universal numbering, 1..32. Upper arch slots 0..15 map to 1..16; lower
/// slots 0..15 map to 32..17, so walking the lower arch left to right counts
/// the index down. Fixed here once; everything else derives from it.
struct ToothId {
  int index = 1;

  bool is_upper() const { return index <= 16; }
  int slot() const { return is_upper() ? index - 1 : 32 - index; }
  static ToothId from_arch_slot(bool upper, int slot) {
    return {upper ? slot + 1 : 32 - slot};
  }
};

/// Intersection over union of two boxes; in [0,1], symmetric, 1 iff equal.
double iou(const Box& a, const Box& b);

/// Ground truth minus estimate on the flattened 64-float layout.
std::array<double, 64> offset_target(const PointSet32& estimated,
                                     const PointSet32& ground_truth);

/// Euclidean distances between consecutive points of one arch.
std::array<double, 15> neighbor_distances(const std::array<Point2, 16>& arch);

/// Smallest extent a predicted box may have; degenerate sizes clamp to this
/// so inference always emits 32 usable boxes.
inline constexpr double kMinBoxExtent = 1e-3;

/// Assembles the final box from a stage-1 center, a refinement offset and a
/// size prediction. Non-positive or sub-epsilon sizes are clamped and, when
/// `clamped` is given, reported.
Box box_from_prediction(const Point2& center, const std::array<double, 2>& offset,
                        const std::array<double, 2>& size,
                        bool* clamped = nullptr);

}  // namespace toothdet::geom
