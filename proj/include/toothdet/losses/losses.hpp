#pragma once

#include <string>
#include <utility>
#include <vector>

#include "toothdet/autodiff/graph.hpp"

namespace toothdet::losses {

/// Combination coefficients of the training objective,
/// L = L_cen + L_dr + alpha*L_off + beta*L_box + gamma*|W|^2.
struct LossWeights {
  double alpha = 3.0;
  double beta = 1.5;
  double gamma = 0.1;
};

struct LossBreakdown {
  double center = 0.0;
  double dr = 0.0;
  double offset = 0.0;
  double box = 0.0;
  double weight_reg = 0.0;
  double total = 0.0;
};

/// Mean squared error over all components; prediction and target must agree
/// in shape. One graph node with a closed-form backward pass.
ad::Var mse_loss(const ad::Var& predicted, const ad::Tensor& target);

/// Stage-1 center objective over the flattened 64-float point layout.
ad::Var center_loss(const ad::Var& predicted, const ad::Tensor& target);

/// Stage-2 offset objective, same 64-float contract as center_loss.
ad::Var offset_loss(const ad::Var& predicted, const ad::Tensor& target);

/// Box size objective over 32 flattened (w,h) pairs.
ad::Var box_loss(const ad::Var& predicted, const ad::Tensor& target);

/// Distance regularization: per arch, neighbor distances d_0..d_14, interior
/// second differences D_i = d_{i+1} - 2 d_i + d_{i-1} for i = 1..13, summed
/// over both arches. `squared` selects sum(D_i^2) (default, smooth at the
/// optimum) versus the plain Euclidean norm per arch. Coincident consecutive
/// points make a distance non-differentiable at 0; the gradient there is
/// defined as 0 and `coincident` (when given) reports the encounter.
ad::Var dr_loss(const ad::Var& predicted64, bool squared = true,
                bool* coincident = nullptr);

/// Weighted sum of the four task terms plus squared-norm weight decay over
/// the trainable parameters. Returns the scalar graph node and a plain-value
/// breakdown of every component.
std::pair<ad::Var, LossBreakdown> total_loss(
    const ad::Var& center, const ad::Var& dr, const ad::Var& offset,
    const ad::Var& box, const std::vector<ad::Var>& trainable_params,
    const LossWeights& weights);

/// Per-step CSV serialization of LossBreakdown.
std::string metrics_csv_header();
std::string metrics_csv_row(long step, const LossBreakdown& b);

}  // namespace toothdet::losses
