#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "oracles.hpp"
#include "toothdet/autodiff/gradcheck.hpp"
#include "toothdet/autodiff/ops.hpp"
#include "toothdet/core/rng.hpp"
#include "toothdet/geometry/geometry.hpp"
#include "toothdet/losses/losses.hpp"

using namespace toothdet;
using namespace toothdet::ad;
using namespace toothdet::losses;

namespace {

Tensor random_vec(Rng& rng, int n, double lo = -10.0, double hi = 10.0) {
  Tensor t({n});
  for (int i = 0; i < n; ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Two plausible arches: x strictly increasing with well-separated points so
// no distance sits near the |.| kink.
Tensor random_arches(Rng& rng) {
  Tensor t({64});
  for (int arch = 0; arch < 2; ++arch) {
    double x = rng.uniform(0.0, 5.0);
    const double y0 = arch == 0 ? 150.0 : 350.0;
    for (int s = 0; s < 16; ++s) {
      x += rng.uniform(0.5, 2.0);
      t[arch * 32 + 2 * s] = x;
      t[arch * 32 + 2 * s + 1] = y0 + rng.uniform(-1.0, 1.0);
    }
  }
  return t;
}

Tensor equally_spaced_arches(double step = 1.0) {
  Tensor t({64});
  for (int arch = 0; arch < 2; ++arch) {
    const double y0 = arch == 0 ? 100.0 : 300.0;
    for (int s = 0; s < 16; ++s) {
      t[arch * 32 + 2 * s] = 10.0 + step * s;
      t[arch * 32 + 2 * s + 1] = y0;
    }
  }
  return t;
}

std::array<double, 64> to_flat(const Tensor& t) {
  std::array<double, 64> flat;
  for (int i = 0; i < 64; ++i) flat[i] = t[i];
  return flat;
}

}  // namespace

TEST_CASE("center_loss matches definition and naive oracle") {
  Rng rng = Rng::fork(31, 0);
  Tensor target = random_vec(rng, 64);
  Var exact(target, true);
  CHECK(center_loss(exact, target).value()[0] == 0.0);

  Tensor off = target;
  for (int i = 0; i < 64; ++i) off[i] += 2.0;
  CHECK(center_loss(Var(off), target).value()[0] == doctest::Approx(4.0));

  for (int seed = 0; seed < 20; ++seed) {
    Rng r = Rng::fork(310 + seed, 0);
    Tensor p = random_vec(r, 64);
    Tensor t = random_vec(r, 64);
    const double got = center_loss(Var(p), t).value()[0];
    const double want = oracles::naive_mse(p.values(), t.values());
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }

  CHECK_THROWS_AS(center_loss(Var(Tensor({63})), Tensor({63})),
                  std::invalid_argument);
  CHECK_THROWS_AS(center_loss(Var(Tensor({64})), Tensor({32})),
                  std::invalid_argument);
}

TEST_CASE("offset_loss and box_loss pinned values") {
  Tensor target({64});
  Tensor half = Tensor::full({64}, 0.5);
  CHECK(offset_loss(Var(half), target).value()[0] == doctest::Approx(0.25));
  CHECK(offset_loss(Var(target), target).value()[0] == 0.0);

  // One (w,h) pair off by (3,4): (9+16)/64.
  Tensor sizes = Tensor::full({64}, 20.0);
  Tensor pred = sizes;
  pred[10] += 3.0;
  pred[11] += 4.0;
  CHECK(box_loss(Var(pred), sizes).value()[0] == 25.0 / 64.0);

  Rng rng = Rng::fork(32, 0);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor p = random_vec(rng, 64);
    Tensor t = random_vec(rng, 64);
    CHECK(box_loss(Var(p), t).value()[0] ==
          doctest::Approx(oracles::naive_mse(p.values(), t.values()))
              .epsilon(1e-12));
  }
}

TEST_CASE("mse losses backpropagate the 2(p-t)/n gradient") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::fork(33 + seed, 0);
    Var p(random_vec(rng, 64), true);
    Tensor t = random_vec(rng, 64);
    auto row = gradcheck("center_loss", {p},
                         [&] { return center_loss(p, t); });
    CHECK(row.max_rel_err <= 1e-6);
  }
}

TEST_CASE("dr_loss is zero exactly on arithmetic-progression spacing") {
  CHECK(dr_loss(Var(equally_spaced_arches())).value()[0] == 0.0);
  CHECK(dr_loss(Var(equally_spaced_arches(2.25))).value()[0] == 0.0);

  // Growing gaps 1, 1.25, 1.5, ... still have zero second differences.
  Tensor ap({64});
  for (int arch = 0; arch < 2; ++arch) {
    double x = 5.0;
    for (int s = 0; s < 16; ++s) {
      ap[arch * 32 + 2 * s] = x;
      ap[arch * 32 + 2 * s + 1] = arch == 0 ? 120.0 : 320.0;
      x += 1.0 + 0.25 * s;
    }
  }
  CHECK(dr_loss(Var(ap)).value()[0] == 0.0);

  // Any non-AP spacing must be strictly positive.
  Tensor bent = equally_spaced_arches();
  bent[2 * 7] += 0.25;
  CHECK(dr_loss(Var(bent)).value()[0] > 0.0);
}

TEST_CASE("dr_loss hand-computed fixture") {
  Tensor t = equally_spaced_arches();
  for (int s = 0; s < 16; ++s) t[2 * s] = 10.0 + s;  // upper x = 10..25
  t[2 * 7] = 17.5;                                   // move slot 7 by +0.5
  // d = (...,1, 1.5, 0.5, 1,...) -> interior second differences
  // (0.5, -1.5, 1.5, -0.5) -> 0.25 + 2.25 + 2.25 + 0.25 = 5.0.
  CHECK(dr_loss(Var(t)).value()[0] == 5.0);
  CHECK(dr_loss(Var(t), false).value()[0] ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("dr_loss agrees with naive recomputation on random arches") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::fork(340 + seed, 0);
    Tensor t = random_arches(rng);
    for (bool squared : {true, false}) {
      const double got = dr_loss(Var(t), squared).value()[0];
      const double want = oracles::naive_dr(to_flat(t), squared);
      CHECK(got == doctest::Approx(want).epsilon(1e-9));
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("dr_loss invariances: translation exact, scaling quadratic") {
  Rng rng = Rng::fork(35, 0);
  for (int seed = 0; seed < 20; ++seed) {
    Tensor t = random_arches(rng);
    const double base = dr_loss(Var(t)).value()[0];

    Tensor shifted = t;
    const double tx = rng.uniform(-50, 50), ty = rng.uniform(-50, 50);
    for (int i = 0; i < 64; i += 2) {
      shifted[i] += tx;
      shifted[i + 1] += ty;
    }
    CHECK(dr_loss(Var(shifted)).value()[0] ==
          doctest::Approx(base).epsilon(1e-9));

    Tensor doubled = t;
    for (int i = 0; i < 64; ++i) doubled[i] *= 2.0;
    CHECK(dr_loss(Var(doubled)).value()[0] ==
          doctest::Approx(4.0 * base).epsilon(1e-12));

    const double s = rng.uniform(0.3, 3.0);
    Tensor scaled = t;
    for (int i = 0; i < 64; ++i) scaled[i] *= s;
    CHECK(dr_loss(Var(scaled)).value()[0] ==
          doctest::Approx(s * s * base).epsilon(1e-9));
  }
}

TEST_CASE("dr_loss gradient matches finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::fork(360 + seed, 0);
    Var p(random_arches(rng), true);
    auto row = gradcheck("dr_loss", {p}, [&] { return dr_loss(p); });
    CAPTURE(seed);
    CHECK(row.max_rel_err <= 1e-4);

    auto row_unsq =
        gradcheck("dr_loss_unsquared", {p}, [&] { return dr_loss(p, false); });
    CHECK(row_unsq.max_rel_err <= 1e-4);
  }
}

TEST_CASE("dr_loss pins coincident-point gradients to zero and flags them") {
  Tensor t = equally_spaced_arches();
  t[2 * 8] = t[2 * 7];  // upper slots 7 and 8 coincide
  t[2 * 8 + 1] = t[2 * 7 + 1];
  bool coincident = false;
  Var p(t, true);
  Var loss = dr_loss(p, true, &coincident);
  CHECK(coincident);
  CHECK(std::isfinite(loss.value()[0]));
  backward(loss);
  for (int i = 0; i < 64; ++i) CHECK(std::isfinite(p.grad()[i]));

  coincident = true;
  dr_loss(Var(equally_spaced_arches()), true, &coincident);
  CHECK_FALSE(coincident);

  CHECK_THROWS_AS(dr_loss(Var(Tensor({32}))), std::invalid_argument);
}

TEST_CASE("total_loss combines parts with the paper coefficients") {
  Var center(Tensor::scalar(2.0));
  Var dr(Tensor::scalar(1.0));
  Var offset(Tensor::scalar(0.5));
  Var box(Tensor::scalar(2.0));
  Var w(Tensor::vector({3.0, 1.0}), true);  // sum of squares = 10

  auto [total, breakdown] = total_loss(center, dr, offset, box, {w}, {});
  CHECK(total.value()[0] == doctest::Approx(8.5).epsilon(1e-12));
  CHECK(breakdown.total == total.value()[0]);
  CHECK(breakdown.center == 2.0);
  CHECK(breakdown.dr == 1.0);
  CHECK(breakdown.offset == 0.5);
  CHECK(breakdown.box == 2.0);
  CHECK(breakdown.weight_reg == 10.0);

  Var zero(Tensor::scalar(0.0));
  Var wz(Tensor::vector({0.0, 0.0}), true);
  auto [tz, bz] = total_loss(zero, zero, zero, zero, {wz}, {});
  CHECK(tz.value()[0] == 0.0);
  CHECK(bz.total == 0.0);
}

TEST_CASE("total_loss breakdown identity holds for random parts") {
  LossWeights weights;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::fork(370 + seed, 0);
    Var c(Tensor::scalar(rng.uniform(0, 5)));
    Var d(Tensor::scalar(rng.uniform(0, 5)));
    Var o(Tensor::scalar(rng.uniform(0, 5)));
    Var b(Tensor::scalar(rng.uniform(0, 5)));
    Var w(random_vec(rng, 7, -1, 1), true);
    auto [total, bd] = total_loss(c, d, o, b, {w}, weights);
    const double recomputed = bd.center + bd.dr + weights.alpha * bd.offset +
                              weights.beta * bd.box +
                              weights.gamma * bd.weight_reg;
    CHECK(std::fabs(bd.total - recomputed) <= 1e-9);
    CHECK(bd.weight_reg >= 0.0);
  }
}

TEST_CASE("total_loss gradient = task terms plus 2*gamma*w") {
  Rng rng = Rng::fork(38, 0);
  Var p(random_vec(rng, 5, -1, 1), true);
  LossWeights weights;

  auto build = [&] {
    Var center = sum_squares(p);
    Var offset = scale(sum_squares(p), 0.5);
    Var zero(Tensor::scalar(0.0));
    return total_loss(center, zero, offset, zero, {p}, weights).first;
  };
  auto row = gradcheck("total_loss", {p}, build);
  CHECK(row.max_rel_err <= 1e-4);

  p.node()->zero_grad();
  backward(build());
  // d/dp [p^2 + 3*(0.5 p^2) + 0.1 p^2] = (2 + 3 + 0.2) p.
  for (int i = 0; i < 5; ++i)
    CHECK(p.grad()[i] == doctest::Approx(5.2 * p.value()[i]).epsilon(1e-12));
}

TEST_CASE("metrics csv layout round-trips") {
  CHECK(metrics_csv_header() == "step,center,dr,offset,box,weight_reg,total");
  LossBreakdown b{1.5, 0.25, 2.0 / 3.0, 0.0, 10.0, 1.5 + 0.25 + 2.0 + 1.0};
  const std::string row = metrics_csv_row(42, b);
  long step = 0;
  double vals[6];
  REQUIRE(std::sscanf(row.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf", &step,
                      &vals[0], &vals[1], &vals[2], &vals[3], &vals[4],
                      &vals[5]) == 7);
  CHECK(step == 42);
  CHECK(vals[0] == b.center);
  CHECK(vals[1] == b.dr);
  CHECK(vals[2] == b.offset);
  CHECK(vals[3] == b.box);
  CHECK(vals[4] == b.weight_reg);
  CHECK(vals[5] == b.total);
}
