#include "toothdet/losses/gradient_suite.hpp"

#include <stdexcept>
#include <string>
#include <utility>

#include "toothdet/autodiff/ops.hpp"
#include "toothdet/core/rng.hpp"
#include "toothdet/losses/losses.hpp"

namespace toothdet::losses {

namespace {

using ad::GradCheckRow;
using ad::Tensor;
using ad::Var;

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Magnitudes bounded away from zero so finite differences never straddle
// the ReLU kink.
Tensor rand_tensor_off_zero(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.05, 1.0);
    t[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

/// Identity whose backward multiplies by 1.02 instead of 1: a planted bug.
Var corrupted_identity(const Var& x) {
  return ad::make_op_node("corrupted_identity", x.value(), {x.node()},
                          [](ad::Node& out) {
                            ad::Node* in = out.parents[0].get();
                            if (!in->requires_grad) return;
                            for (int64_t i = 0; i < out.grad.numel(); ++i)
                              in->grad[i] += 1.02 * out.grad[i];
                          });
}

void fold(std::vector<GradCheckRow>& rows, const GradCheckRow& r) {
  for (GradCheckRow& have : rows) {
    if (have.label != r.label) continue;
    have.max_rel_err = std::max(have.max_rel_err, r.max_rel_err);
    have.checked += r.checked;
    return;
  }
  rows.push_back(r);
}

}  // namespace

std::vector<GradCheckRow> run_gradient_suite(uint64_t seed, int rounds,
                                             bool corrupt_dr) {
  if (rounds < 1)
    throw std::invalid_argument("gradient suite: rounds must be positive");

  std::vector<GradCheckRow> rows;
  for (int round = 0; round < rounds; ++round) {
    Rng rng = Rng::fork(seed, 0x47D0ULL + uint64_t(round));
    const auto p = [](Tensor t) { return Var(std::move(t), true); };

    {
      Var in = p(rand_tensor(rng, {2, 6, 7}, -1, 1));
      Var w = p(rand_tensor(rng, {3, 2, 3, 3}, -1, 1));
      Var b = p(rand_tensor(rng, {3}, -0.5, 0.5));
      fold(rows, ad::gradcheck("conv2d stride 1", {in, w, b}, [&] {
        return ad::sum_squares(ad::conv2d(in, w, b, 1, 1));
      }));
    }
    {
      Var in = p(rand_tensor(rng, {2, 7, 9}, -1, 1));
      Var w = p(rand_tensor(rng, {2, 2, 3, 3}, -1, 1));
      Var b = p(rand_tensor(rng, {2}, -0.5, 0.5));
      fold(rows, ad::gradcheck("conv2d stride 2", {in, w, b}, [&] {
        return ad::sum_squares(ad::conv2d(in, w, b, 2, 1));
      }));
    }
    {
      Var in = p(rand_tensor_off_zero(rng, {40}));
      fold(rows, ad::gradcheck("relu", {in}, [&] {
        return ad::sum_squares(ad::relu(in));
      }));
    }
    {
      Var in = p(rand_tensor(rng, {3, 4, 5}, -1, 1));
      fold(rows, ad::gradcheck("global_avg_pool", {in}, [&] {
        return ad::sum_squares(ad::global_avg_pool(in));
      }));
    }
    {
      Var x = p(rand_tensor(rng, {5}, -1, 1));
      Var w = p(rand_tensor(rng, {4, 5}, -1, 1));
      Var b = p(rand_tensor(rng, {4}, -0.5, 0.5));
      fold(rows, ad::gradcheck("fully_connected", {x, w, b}, [&] {
        return ad::sum_squares(ad::fully_connected(x, w, b));
      }));
    }
    {
      Var in = p(rand_tensor(rng, {2, 4, 5}, -1, 1));
      fold(rows, ad::gradcheck("upsample_bilinear", {in}, [&] {
        return ad::sum_squares(ad::upsample_bilinear(in, 9, 11));
      }));
    }
    {
      Var a = p(rand_tensor(rng, {2, 4, 4}, -1, 1));
      Var b = p(rand_tensor(rng, {3, 4, 4}, -1, 1));
      fold(rows, ad::gradcheck("concat_channels", {a, b}, [&] {
        return ad::sum_squares(ad::concat_channels(a, b));
      }));
    }
    {
      Var in = p(rand_tensor(rng, {2, 10, 10}, -1, 1));
      fold(rows, ad::gradcheck("crop_window", {in}, [&] {
        return ad::sum_squares(ad::crop_window(in, -2, 3, 6));
      }));
    }
    {
      Var a = p(rand_tensor(rng, {3}, -1, 1));
      Var b = p(rand_tensor(rng, {4}, -1, 1));
      Var c = p(rand_tensor(rng, {2}, -1, 1));
      fold(rows, ad::gradcheck("concat_vec", {a, b, c}, [&] {
        return ad::sum_squares(ad::concat_vec({a, b, c}));
      }));
    }
    {
      Var a = p(rand_tensor(rng, {12}, -1, 1));
      Var b = p(rand_tensor(rng, {12}, -1, 1));
      fold(rows, ad::gradcheck("add", {a, b}, [&] {
        return ad::sum_squares(ad::add(a, b));
      }));
    }
    {
      Var x = p(rand_tensor(rng, {10}, -1, 1));
      fold(rows, ad::gradcheck("scale", {x}, [&] {
        return ad::sum_squares(ad::scale(x, 1.7));
      }));
    }
    {
      Var x = p(rand_tensor(rng, {10}, -1, 1));
      const Tensor c = rand_tensor(rng, {10}, 0.5, 2.0);
      fold(rows, ad::gradcheck("cmul", {x}, [&] {
        return ad::sum_squares(ad::cmul(x, c));
      }));
    }
    {
      Var x = p(rand_tensor(rng, {10}, -1, 1));
      const Tensor c = rand_tensor(rng, {10}, -1.0, 1.0);
      fold(rows, ad::gradcheck("cadd", {x}, [&] {
        return ad::sum_squares(ad::cadd(x, c));
      }));
    }
    {
      Var x = p(rand_tensor(rng, {15}, -1, 1));
      fold(rows, ad::gradcheck("vsum", {x}, [&] { return ad::vsum(x); }));
    }
    {
      Var x = p(rand_tensor(rng, {15}, -1, 1));
      fold(rows,
           ad::gradcheck("sum_squares", {x}, [&] { return ad::sum_squares(x); }));
    }
    {
      Var x = p(rand_tensor(rng, {20}, -2, 2));
      const Tensor t = rand_tensor(rng, {20}, -2, 2);
      fold(rows, ad::gradcheck("mse_loss", {x}, [&] { return mse_loss(x, t); }));
    }
    {
      Var x = p(rand_tensor(rng, {64}, 0, 500));
      const Tensor t = rand_tensor(rng, {64}, 0, 500);
      fold(rows,
           ad::gradcheck("center_loss", {x}, [&] { return center_loss(x, t); }));
      fold(rows,
           ad::gradcheck("offset_loss", {x}, [&] { return offset_loss(x, t); }));
      fold(rows, ad::gradcheck("box_loss", {x}, [&] { return box_loss(x, t); }));
    }
    {
      Var x = p(rand_tensor(rng, {64}, 0, 200));
      fold(rows, ad::gradcheck("dr_loss squared", {x},
                               [&] { return dr_loss(x, true); }));
      fold(rows, ad::gradcheck("dr_loss norm", {x},
                               [&] { return dr_loss(x, false); }));
    }
    {
      Var c = p(rand_tensor(rng, {64}, 0, 500));
      Var o = p(rand_tensor(rng, {64}, -30, 30));
      Var s = p(rand_tensor(rng, {64}, 5, 80));
      const Tensor ct = rand_tensor(rng, {64}, 0, 500);
      const Tensor ot = rand_tensor(rng, {64}, -30, 30);
      const Tensor st = rand_tensor(rng, {64}, 5, 80);
      const LossWeights weights;
      fold(rows, ad::gradcheck("total_loss", {c, o, s}, [&] {
        return total_loss(center_loss(c, ct), dr_loss(c), offset_loss(o, ot),
                          box_loss(s, st), {c, o, s}, weights)
            .first;
      }));
    }
    if (corrupt_dr) {
      Var x = p(rand_tensor(rng, {64}, 0, 200));
      fold(rows, ad::gradcheck("dr_loss (corrupted hook)", {x}, [&] {
        return corrupted_identity(dr_loss(x));
      }));
    }
  }
  return rows;
}

}  // namespace toothdet::losses
