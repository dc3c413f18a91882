#include "toothdet/autodiff/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace toothdet::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Valid output range along one axis for kernel offset k: indices o with
// 0 <= o*stride + k - padding < extent. Bounds are precomputed so the inner
// copy loops run branch-free.
struct AxisSpan {
  int lo = 0;
  int hi = -1;  // inclusive; empty when hi < lo
};

AxisSpan valid_span(int extent, int out_extent, int k, int stride,
                    int padding) {
  AxisSpan s;
  s.lo = padding > k ? (padding - k + stride - 1) / stride : 0;
  const int num = extent - 1 - k + padding;
  s.hi = num < 0 ? -1 : std::min(out_extent - 1, num / stride);
  return s;
}

void im2col(const double* x, double* col, int C, int H, int W, int kh, int kw,
            int stride, int padding, int OH, int OW) {
  const int OHW = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      const AxisSpan ys = valid_span(H, OH, ky, stride, padding);
      for (int kx = 0; kx < kw; ++kx) {
        const AxisSpan xs = valid_span(W, OW, kx, stride, padding);
        double* row = col + ((c * kh + ky) * kw + kx) * OHW;
        for (int oy = ys.lo; oy <= ys.hi; ++oy) {
          const int iy = oy * stride + ky - padding;
          const double* src = x + (c * H + iy) * W;
          double* dst = row + oy * OW;
          for (int ox = xs.lo; ox <= xs.hi; ++ox)
            dst[ox] = src[ox * stride + kx - padding];
        }
      }
    }
  }
}

void col2im_accum(const double* col, double* gx, int C, int H, int W, int kh,
                  int kw, int stride, int padding, int OH, int OW) {
  const int OHW = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      const AxisSpan ys = valid_span(H, OH, ky, stride, padding);
      for (int kx = 0; kx < kw; ++kx) {
        const AxisSpan xs = valid_span(W, OW, kx, stride, padding);
        const double* row = col + ((c * kh + ky) * kw + kx) * OHW;
        for (int oy = ys.lo; oy <= ys.hi; ++oy) {
          const int iy = oy * stride + ky - padding;
          double* dst = gx + (c * H + iy) * W;
          const double* src = row + oy * OW;
          for (int ox = xs.lo; ox <= xs.hi; ++ox)
            dst[ox * stride + kx - padding] += src[ox];
        }
      }
    }
  }
}

// Half-pixel sampling locations for align-corners-false interpolation.
struct AxisTable {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

AxisTable sample_axis(int in, int out) {
  AxisTable t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double s = (o + 0.5) * ratio - 0.5;
    const double f = std::floor(s);
    const int base = static_cast<int>(f);
    const double frac = s - f;
    t.i0[o] = std::clamp(base, 0, in - 1);
    t.i1[o] = std::clamp(base + 1, 0, in - 1);
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

}  // namespace

Var conv2d(const Var& input, const Var& weights, const Var& bias, int stride,
           int padding) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  check(x.rank() == 3, "conv2d: input must be [C,H,W], got " + x.shape_str());
  check(w.rank() == 4,
        "conv2d: weights must be [K,C,kh,kw], got " + w.shape_str());
  check(b.rank() == 1, "conv2d: bias must be [K], got " + b.shape_str());
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(padding >= 0, "conv2d: padding must be >= 0");
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const int K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  check(w.extent(1) == C, "conv2d: weight channels " +
                              std::to_string(w.extent(1)) +
                              " do not match input channels " +
                              std::to_string(C));
  check(b.extent(0) == K, "conv2d: bias length " + std::to_string(b.extent(0)) +
                              " does not match output channels " +
                              std::to_string(K));
  check(kh <= H + 2 * padding && kw <= W + 2 * padding,
        "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
            " exceeds padded input " + std::to_string(H + 2 * padding) + "x" +
            std::to_string(W + 2 * padding));
  const int OH = (H + 2 * padding - kh) / stride + 1;
  const int OW = (W + 2 * padding - kw) / stride + 1;
  check(OH > 0 && OW > 0, "conv2d: zero-sized output " + std::to_string(OH) +
                              "x" + std::to_string(OW));

  const int CKK = C * kh * kw;
  const int OHW = OH * OW;
  std::vector<double> col(static_cast<size_t>(CKK) * OHW, 0.0);
  im2col(x.data(), col.data(), C, H, W, kh, kw, stride, padding, OH, OW);

  Tensor out({K, OH, OW});
  {
    Eigen::Map<const RowMat> wm(w.data(), K, CKK);
    Eigen::Map<const RowMat> cm(col.data(), CKK, OHW);
    Eigen::Map<RowMat> om(out.data(), K, OHW);
    om.noalias() = wm * cm;
    for (int k = 0; k < K; ++k) om.row(k).array() += b[k];
  }

  return make_op_node(
      "conv2d", std::move(out),
      {input.node(), weights.node(), bias.node()},
      [col = std::move(col), C, H, W, K, kh, kw, stride, padding, OH,
       OW](Node& n) {
        const int CKK = C * kh * kw;
        const int OHW = OH * OW;
        Node* in = n.parents[0].get();
        Node* wn = n.parents[1].get();
        Node* bn = n.parents[2].get();
        Eigen::Map<const RowMat> g(n.grad.data(), K, OHW);
        if (bn->requires_grad)
          for (int k = 0; k < K; ++k) bn->grad[k] += g.row(k).sum();
        if (wn->requires_grad) {
          Eigen::Map<const RowMat> cm(col.data(), CKK, OHW);
          Eigen::Map<RowMat> gw(wn->grad.data(), K, CKK);
          gw.noalias() += g * cm.transpose();
        }
        if (in->requires_grad) {
          Eigen::Map<const RowMat> wm(wn->value.data(), K, CKK);
          RowMat dcol(CKK, OHW);
          dcol.noalias() = wm.transpose() * g;
          col2im_accum(dcol.data(), in->grad.data(), C, H, W, kh, kw, stride,
                       padding, OH, OW);
        }
      });
}

Var relu(const Var& input) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  for (int i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_op_node("relu", std::move(out), {input.node()}, [](Node& n) {
    Node* in = n.parents[0].get();
    if (!in->requires_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i)
      if (in->value[i] > 0.0) in->grad[i] += n.grad[i];
  });
}

Var global_avg_pool(const Var& input) {
  const Tensor& x = input.value();
  check(x.rank() == 3,
        "global_avg_pool: input must be [C,H,W], got " + x.shape_str());
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const int HW = H * W;
  check(HW > 0, "global_avg_pool: empty spatial extent");
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    const double* p = x.data() + c * HW;
    for (int i = 0; i < HW; ++i) acc += p[i];
    out[c] = acc / HW;
  }
  return make_op_node("global_avg_pool", std::move(out), {input.node()},
                      [C, HW](Node& n) {
                        Node* in = n.parents[0].get();
                        if (!in->requires_grad) return;
                        for (int c = 0; c < C; ++c) {
                          const double g = n.grad[c] / HW;
                          double* p = in->grad.data() + c * HW;
                          for (int i = 0; i < HW; ++i) p[i] += g;
                        }
                      });
}

Var fully_connected(const Var& input, const Var& weights, const Var& bias) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  check(x.rank() == 1,
        "fully_connected: input must be [N], got " + x.shape_str());
  check(w.rank() == 2,
        "fully_connected: weights must be [M,N], got " + w.shape_str());
  check(b.rank() == 1,
        "fully_connected: bias must be [M], got " + b.shape_str());
  const int N = x.extent(0), M = w.extent(0);
  check(w.extent(1) == N, "fully_connected: weight width " +
                              std::to_string(w.extent(1)) +
                              " does not match input length " +
                              std::to_string(N));
  check(b.extent(0) == M, "fully_connected: bias length " +
                              std::to_string(b.extent(0)) +
                              " does not match output length " +
                              std::to_string(M));
  Tensor out({M});
  for (int m = 0; m < M; ++m) {
    double acc = b[m];
    const double* row = w.data() + m * N;
    for (int i = 0; i < N; ++i) acc += row[i] * x[i];
    out[m] = acc;
  }
  return make_op_node(
      "fully_connected", std::move(out),
      {input.node(), weights.node(), bias.node()}, [M, N](Node& n) {
        Node* in = n.parents[0].get();
        Node* wn = n.parents[1].get();
        Node* bn = n.parents[2].get();
        for (int m = 0; m < M; ++m) {
          const double g = n.grad[m];
          if (bn->requires_grad) bn->grad[m] += g;
          if (wn->requires_grad) {
            double* row = wn->grad.data() + m * N;
            for (int i = 0; i < N; ++i) row[i] += g * in->value[i];
          }
          if (in->requires_grad) {
            const double* row = wn->value.data() + m * N;
            for (int i = 0; i < N; ++i) in->grad[i] += g * row[i];
          }
        }
      });
}

Var upsample_bilinear(const Var& input, int target_h, int target_w) {
  const Tensor& x = input.value();
  check(x.rank() == 3,
        "upsample_bilinear: input must be [C,H,W], got " + x.shape_str());
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  check(H >= 1 && W >= 1, "upsample_bilinear: empty input");
  check(target_h >= H && target_w >= W,
        "upsample_bilinear: downscaling " + std::to_string(H) + "x" +
            std::to_string(W) + " -> " + std::to_string(target_h) + "x" +
            std::to_string(target_w) + " rejected");
  AxisTable ty = sample_axis(H, target_h);
  AxisTable tx = sample_axis(W, target_w);
  Tensor out({C, target_h, target_w});
  for (int c = 0; c < C; ++c) {
    const double* plane = x.data() + c * H * W;
    double* oplane = out.data() + c * target_h * target_w;
    for (int oy = 0; oy < target_h; ++oy) {
      const double* r0 = plane + ty.i0[oy] * W;
      const double* r1 = plane + ty.i1[oy] * W;
      const double wy0 = ty.w0[oy], wy1 = ty.w1[oy];
      double* orow = oplane + oy * target_w;
      for (int ox = 0; ox < target_w; ++ox) {
        const int x0 = tx.i0[ox], x1 = tx.i1[ox];
        orow[ox] = wy0 * (tx.w0[ox] * r0[x0] + tx.w1[ox] * r0[x1]) +
                   wy1 * (tx.w0[ox] * r1[x0] + tx.w1[ox] * r1[x1]);
      }
    }
  }
  return make_op_node(
      "upsample_bilinear", std::move(out), {input.node()},
      [ty = std::move(ty), tx = std::move(tx), C, H, W, target_h,
       target_w](Node& n) {
        Node* in = n.parents[0].get();
        if (!in->requires_grad) return;
        for (int c = 0; c < C; ++c) {
          double* gplane = in->grad.data() + c * H * W;
          const double* gout = n.grad.data() + c * target_h * target_w;
          for (int oy = 0; oy < target_h; ++oy) {
            double* r0 = gplane + ty.i0[oy] * W;
            double* r1 = gplane + ty.i1[oy] * W;
            const double wy0 = ty.w0[oy], wy1 = ty.w1[oy];
            const double* grow = gout + oy * target_w;
            for (int ox = 0; ox < target_w; ++ox) {
              const double g = grow[ox];
              const int x0 = tx.i0[ox], x1 = tx.i1[ox];
              r0[x0] += wy0 * tx.w0[ox] * g;
              r0[x1] += wy0 * tx.w1[ox] * g;
              r1[x0] += wy1 * tx.w0[ox] * g;
              r1[x1] += wy1 * tx.w1[ox] * g;
            }
          }
        }
      });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  check(ta.rank() == 3 && tb.rank() == 3,
        "concat_channels: inputs must be [C,H,W], got " + ta.shape_str() +
            " and " + tb.shape_str());
  check(ta.extent(1) == tb.extent(1) && ta.extent(2) == tb.extent(2),
        "concat_channels: spatial extents differ, " + ta.shape_str() +
            " vs " + tb.shape_str());
  const int Ca = ta.extent(0), Cb = tb.extent(0);
  const int H = ta.extent(1), W = ta.extent(2);
  const int plane = H * W;
  Tensor out({Ca + Cb, H, W});
  std::copy(ta.data(), ta.data() + static_cast<size_t>(Ca) * plane,
            out.data());
  std::copy(tb.data(), tb.data() + static_cast<size_t>(Cb) * plane,
            out.data() + static_cast<size_t>(Ca) * plane);
  return make_op_node(
      "concat_channels", std::move(out), {a.node(), b.node()},
      [Ca, Cb, plane](Node& n) {
        Node* an = n.parents[0].get();
        Node* bn = n.parents[1].get();
        const int na = Ca * plane;
        if (an->requires_grad)
          for (int i = 0; i < na; ++i) an->grad[i] += n.grad[i];
        if (bn->requires_grad)
          for (int i = 0; i < Cb * plane; ++i) bn->grad[i] += n.grad[na + i];
      });
}

Var crop_window(const Var& input, int left, int top, int size) {
  const Tensor& x = input.value();
  check(x.rank() == 3,
        "crop_window: input must be [C,H,W], got " + x.shape_str());
  check(size >= 1, "crop_window: size must be >= 1");
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  Tensor out({C, size, size});
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < size; ++oy) {
      const int iy = top + oy;
      if (iy < 0 || iy >= H) continue;  // stays zero outside the canvas
      const double* src = x.data() + (c * H + iy) * W;
      double* dst = out.data() + (c * size + oy) * size;
      for (int ox = 0; ox < size; ++ox) {
        const int ix = left + ox;
        if (ix >= 0 && ix < W) dst[ox] = src[ix];
      }
    }
  }
  return make_op_node(
      "crop_window", std::move(out), {input.node()},
      [left, top, size, C, H, W](Node& n) {
        Node* in = n.parents[0].get();
        if (!in->requires_grad) return;
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < size; ++oy) {
            const int iy = top + oy;
            if (iy < 0 || iy >= H) continue;
            double* dst = in->grad.data() + (c * H + iy) * W;
            const double* src = n.grad.data() + (c * size + oy) * size;
            for (int ox = 0; ox < size; ++ox) {
              const int ix = left + ox;
              if (ix >= 0 && ix < W) dst[ix] += src[ox];
            }
          }
        }
      });
}

Var concat_vec(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_vec: no inputs");
  int total = 0;
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const Var& p : parts) {
    check(p.defined(), "concat_vec: undefined input");
    check(p.value().rank() == 1,
          "concat_vec: inputs must be 1-D, got " + p.value().shape_str());
    total += p.value().numel();
    parents.push_back(p.node());
  }
  Tensor out({total});
  int off = 0;
  std::vector<int> offsets(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = off;
    const Tensor& t = parts[i].value();
    std::copy(t.data(), t.data() + t.numel(), out.data() + off);
    off += t.numel();
  }
  return make_op_node("concat_vec", std::move(out), std::move(parents),
                      [offsets = std::move(offsets)](Node& n) {
                        for (size_t i = 0; i < n.parents.size(); ++i) {
                          Node* p = n.parents[i].get();
                          if (!p->requires_grad) continue;
                          const int off = offsets[i];
                          const int len = p->value.numel();
                          for (int j = 0; j < len; ++j)
                            p->grad[j] += n.grad[off + j];
                        }
                      });
}

Var add(const Var& a, const Var& b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  check(ta.same_shape(tb), "add: shape mismatch, " + ta.shape_str() + " vs " +
                               tb.shape_str());
  Tensor out(ta.shape());
  for (int i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
  return make_op_node("add", std::move(out), {a.node(), b.node()},
                      [](Node& n) {
                        for (const auto& p : n.parents) {
                          if (!p->requires_grad) continue;
                          for (int i = 0; i < n.grad.numel(); ++i)
                            p->grad[i] += n.grad[i];
                        }
                      });
}

Var scale(const Var& x, double factor) {
  const Tensor& t = x.value();
  Tensor out(t.shape());
  for (int i = 0; i < t.numel(); ++i) out[i] = t[i] * factor;
  return make_op_node("scale", std::move(out), {x.node()}, [factor](Node& n) {
    Node* in = n.parents[0].get();
    if (!in->requires_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i) in->grad[i] += factor * n.grad[i];
  });
}

Var cmul(const Var& x, const Tensor& c) {
  const Tensor& t = x.value();
  check(t.same_shape(c), "cmul: shape mismatch, " + t.shape_str() + " vs " +
                             c.shape_str());
  Tensor out(t.shape());
  for (int i = 0; i < t.numel(); ++i) out[i] = t[i] * c[i];
  return make_op_node("cmul", std::move(out), {x.node()}, [c](Node& n) {
    Node* in = n.parents[0].get();
    if (!in->requires_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i) in->grad[i] += c[i] * n.grad[i];
  });
}

Var cadd(const Var& x, const Tensor& c) {
  const Tensor& t = x.value();
  check(t.same_shape(c), "cadd: shape mismatch, " + t.shape_str() + " vs " +
                             c.shape_str());
  Tensor out(t.shape());
  for (int i = 0; i < t.numel(); ++i) out[i] = t[i] + c[i];
  return make_op_node("cadd", std::move(out), {x.node()}, [](Node& n) {
    Node* in = n.parents[0].get();
    if (!in->requires_grad) return;
    for (int i = 0; i < n.grad.numel(); ++i) in->grad[i] += n.grad[i];
  });
}

Var vsum(const Var& x) {
  const Tensor& t = x.value();
  double acc = 0.0;
  for (int i = 0; i < t.numel(); ++i) acc += t[i];
  return make_op_node("vsum", Tensor::scalar(acc), {x.node()}, [](Node& n) {
    Node* in = n.parents[0].get();
    if (!in->requires_grad) return;
    const double g = n.grad[0];
    for (int i = 0; i < in->value.numel(); ++i) in->grad[i] += g;
  });
}

Var sum_squares(const Var& x) {
  const Tensor& t = x.value();
  double acc = 0.0;
  for (int i = 0; i < t.numel(); ++i) acc += t[i] * t[i];
  return make_op_node("sum_squares", Tensor::scalar(acc), {x.node()},
                      [](Node& n) {
                        Node* in = n.parents[0].get();
                        if (!in->requires_grad) return;
                        const double g = n.grad[0];
                        for (int i = 0; i < in->value.numel(); ++i)
                          in->grad[i] += 2.0 * in->value[i] * g;
                      });
}

}  // namespace toothdet::ad
