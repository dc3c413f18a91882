#pragma once

#include <vector>

#include "toothdet/autodiff/graph.hpp"

namespace toothdet::ad {

/// 2D convolution, NCHW without batch: input [C,H,W], weights [K,C,kh,kw],
/// bias [K] -> [K,H',W'] with H' = (H + 2*padding - kh)/stride + 1.
/// Differentiable w.r.t. input, weights and bias. Rejects shape mismatches
/// and zero-sized outputs.
Var conv2d(const Var& input, const Var& weights, const Var& bias, int stride,
           int padding);

/// Elementwise max(0, x); subgradient at 0 is 0.
Var relu(const Var& input);

/// [C,H,W] -> [C], each channel averaged over its H*W cells.
Var global_avg_pool(const Var& input);

/// Affine map: weights [M,N] * input [N] + bias [M] -> [M].
Var fully_connected(const Var& input, const Var& weights, const Var& bias);

/// Align-corners-false bilinear upsampling of [C,H,W] to [C,th,tw].
/// Output pixel centers sample the input at ((o+0.5)*in/out - 0.5) per axis,
/// clamped at the edges (half-pixel convention). Downscaling is rejected.
Var upsample_bilinear(const Var& input, int target_h, int target_w);

/// Channel stacking of [Ca,H,W] and [Cb,H,W] -> [Ca+Cb,H,W], a first.
/// Cb = 0 is legal and returns a copy of a.
Var concat_channels(const Var& a, const Var& b);

/// Axis-aligned window [left, left+size) x [top, top+size) of a [C,H,W]
/// tensor, zero-padded where it leaves the canvas. Differentiable w.r.t. the
/// input values; the window position is a plain integer (no gradient path).
Var crop_window(const Var& input, int left, int top, int size);

/// Concatenation of 1-D tensors in argument order.
Var concat_vec(const std::vector<Var>& parts);

/// Elementwise sum of two same-shape tensors.
Var add(const Var& a, const Var& b);

/// x * factor.
Var scale(const Var& x, double factor);

/// Elementwise x * c with a constant tensor (decode scaling etc).
Var cmul(const Var& x, const Tensor& c);

/// Elementwise x + c with a constant tensor.
Var cadd(const Var& x, const Tensor& c);

/// Sum of all entries -> scalar.
Var vsum(const Var& x);

/// Sum of squared entries -> scalar.
Var sum_squares(const Var& x);

}  // namespace toothdet::ad
