#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "toothdet/core/rng.hpp"
#include "toothdet/geometry/geometry.hpp"

using namespace toothdet;
using namespace toothdet::geom;

namespace {

Box random_box(Rng& rng) {
  return {rng.uniform(0.0, 768.0), rng.uniform(0.0, 512.0),
          rng.uniform(1.0, 120.0), rng.uniform(1.0, 120.0)};
}

// Coordinates on a 1/16-pixel grid so difference-then-add round-trips are
// exact in double arithmetic.
Point2 grid_point(Rng& rng) {
  return {static_cast<double>(rng.below(768 * 16)) / 16.0,
          static_cast<double>(rng.below(512 * 16)) / 16.0};
}

}  // namespace

TEST_CASE("iou pinned values") {
  Box a{2, 2, 4, 4};
  CHECK(iou(a, a) == 1.0);

  Box far{200, 200, 4, 4};
  CHECK(iou(a, far) == 0.0);

  // Overlap 2x4 = 8, union 16 + 16 - 8 = 24.
  Box b{4, 2, 4, 4};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // Boxes sharing only an edge intersect with zero area.
  Box touching{6, 2, 4, 4};
  CHECK(iou(a, touching) == 0.0);
}

TEST_CASE("iou symmetry, identity, and scale invariance") {
  Rng rng = Rng::fork(21, 0);
  for (int i = 0; i < 1000; ++i) {
    Box a = random_box(rng);
    Box b = random_box(rng);
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(a, a) == 1.0);

    const double s = rng.uniform(0.25, 4.0);
    Box as{a.cx * s, a.cy * s, a.w * s, a.h * s};
    Box bs{b.cx * s, b.cy * s, b.w * s, b.h * s};
    CHECK(iou(as, bs) == doctest::Approx(ab).epsilon(1e-12));

    Box shifted{a.cx + a.w + b.w + 1.0, a.cy, a.w, a.h};
    CHECK(iou(a, shifted) == 0.0);
  }
}

TEST_CASE("offset_target is the algebraic inverse of application") {
  PointSet32 est, gt;
  for (int s = 0; s < 16; ++s) {
    est.upper[s] = {10.0 + s, 10.0};
    est.lower[s] = {10.0 + s, 20.0};
  }
  gt = est;
  auto zero = offset_target(est, gt);
  for (double v : zero) CHECK(v == 0.0);

  gt.upper[3] = {12.0, 8.0};
  est.upper[3] = {10.0, 10.0};
  auto off = offset_target(est, gt);
  CHECK(off[6] == 2.0);
  CHECK(off[7] == -2.0);

  Rng rng = Rng::fork(22, 0);
  for (int trial = 0; trial < 50; ++trial) {
    PointSet32 e, g;
    for (int s = 0; s < 16; ++s) {
      e.upper[s] = grid_point(rng);
      e.lower[s] = grid_point(rng);
      g.upper[s] = grid_point(rng);
      g.lower[s] = grid_point(rng);
    }
    auto o = offset_target(e, g);
    auto ef = e.flatten();
    auto gf = g.flatten();
    for (int i = 0; i < 64; ++i) CHECK(ef[i] + o[i] == gf[i]);
  }
}

TEST_CASE("neighbor_distances over one arch") {
  std::array<Point2, 16> arch;
  for (int i = 0; i < 16; ++i) arch[i] = {static_cast<double>(i), 5.0};
  auto d = neighbor_distances(arch);
  for (double v : d) CHECK(v == 1.0);

  arch[8] = arch[7];  // coincident pair
  d = neighbor_distances(arch);
  CHECK(d[7] == 0.0);

  // x = 0, 1, 3, then unit steps again.
  for (int i = 0; i < 16; ++i) arch[i] = {static_cast<double>(i + 1), 0.0};
  arch[0] = {0.0, 0.0};
  arch[1] = {1.0, 0.0};
  arch[2] = {3.0, 0.0};
  arch[3] = {4.0, 0.0};
  d = neighbor_distances(arch);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 2.0);
  CHECK(d[2] == 1.0);
}

TEST_CASE("box_from_prediction composes center, offset, size") {
  bool clamped = true;
  Box plain = box_from_prediction({50, 60}, {0, 0}, {10, 12}, &clamped);
  CHECK(plain.cx == 50.0);
  CHECK(plain.cy == 60.0);
  CHECK(plain.w == 10.0);
  CHECK(plain.h == 12.0);
  CHECK_FALSE(clamped);

  Box moved = box_from_prediction({100, 100}, {2, -2}, {40, 60});
  CHECK(moved.cx == 102.0);
  CHECK(moved.cy == 98.0);
  CHECK(moved.w == 40.0);
  CHECK(moved.h == 60.0);

  Box degenerate = box_from_prediction({10, 10}, {0, 0}, {-5, 20}, &clamped);
  CHECK(degenerate.w == kMinBoxExtent);
  CHECK(degenerate.h == 20.0);
  CHECK(clamped);
}

TEST_CASE("tooth id bijection") {
  CHECK(ToothId::from_arch_slot(true, 0).index == 1);
  CHECK(ToothId::from_arch_slot(true, 15).index == 16);
  CHECK(ToothId::from_arch_slot(false, 0).index == 32);
  CHECK(ToothId::from_arch_slot(false, 15).index == 17);

  for (int idx = 1; idx <= 32; ++idx) {
    ToothId id{idx};
    CHECK(ToothId::from_arch_slot(id.is_upper(), id.slot()).index == idx);
    CHECK(id.slot() >= 0);
    CHECK(id.slot() < 16);
  }
  // Distinctness over all (arch, slot) pairs.
  std::array<int, 33> seen{};
  for (int arch = 0; arch < 2; ++arch)
    for (int s = 0; s < 16; ++s)
      ++seen[ToothId::from_arch_slot(arch == 0, s).index];
  for (int idx = 1; idx <= 32; ++idx) CHECK(seen[idx] == 1);
}

TEST_CASE("point set flattening round-trips") {
  Rng rng = Rng::fork(23, 0);
  PointSet32 ps;
  for (int s = 0; s < 16; ++s) {
    ps.upper[s] = {rng.uniform(0, 768), rng.uniform(0, 256)};
    ps.lower[s] = {rng.uniform(0, 768), rng.uniform(256, 512)};
  }
  auto flat = ps.flatten();
  CHECK(flat[0] == ps.upper[0].x);
  CHECK(flat[1] == ps.upper[0].y);
  CHECK(flat[32] == ps.lower[0].x);
  CHECK(flat[63] == ps.lower[15].y);
  PointSet32 back = PointSet32::from_flat(flat);
  for (int s = 0; s < 16; ++s) {
    CHECK(back.upper[s].x == ps.upper[s].x);
    CHECK(back.upper[s].y == ps.upper[s].y);
    CHECK(back.lower[s].x == ps.lower[s].x);
    CHECK(back.lower[s].y == ps.lower[s].y);
  }
}
