#include "toothdet/losses/losses.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "toothdet/autodiff/ops.hpp"

namespace toothdet::losses {

using ad::make_op_node;
using ad::Node;
using ad::Tensor;
using ad::Var;

namespace {

Var mse_node(const char* op, const Var& predicted, const Tensor& target) {
  const Tensor& p = predicted.value();
  if (!p.same_shape(target))
    throw std::invalid_argument(std::string(op) + ": prediction shape " +
                                p.shape_str() + " does not match target " +
                                target.shape_str());
  const int n = static_cast<int>(p.numel());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = p[i] - target[i];
    acc += e * e;
  }
  return make_op_node(op, Tensor::scalar(acc / n), {predicted.node()},
                      [target, n](Node& out) {
                        Node* in = out.parents[0].get();
                        if (!in->requires_grad) return;
                        const double g = 2.0 * out.grad[0] / n;
                        for (int i = 0; i < n; ++i)
                          in->grad[i] += g * (in->value[i] - target[i]);
                      });
}

void require64(const char* op, const Var& v) {
  if (v.value().numel() != 64)
    throw std::invalid_argument(std::string(op) + ": expected 64 floats, got " +
                                v.value().shape_str());
}

// Per-arch scratch carried from forward to backward.
struct ArchState {
  double d[15];        // neighbor distances
  double ux[15];       // unit vectors along each neighbor segment
  double uy[15];
  double delta[13];    // interior second differences of d
  double norm = 0.0;   // Euclidean norm of delta (unsquared convention)
};

}  // namespace

Var mse_loss(const Var& predicted, const Tensor& target) {
  return mse_node("mse_loss", predicted, target);
}

Var center_loss(const Var& predicted, const Tensor& target) {
  require64("center_loss", predicted);
  return mse_node("center_loss", predicted, target);
}

Var offset_loss(const Var& predicted, const Tensor& target) {
  require64("offset_loss", predicted);
  return mse_node("offset_loss", predicted, target);
}

Var box_loss(const Var& predicted, const Tensor& target) {
  require64("box_loss", predicted);
  return mse_node("box_loss", predicted, target);
}

Var dr_loss(const Var& predicted64, bool squared, bool* coincident) {
  require64("dr_loss", predicted64);
  const Tensor& p = predicted64.value();

  bool hit_coincident = false;
  std::array<ArchState, 2> arches;
  double value = 0.0;
  for (int a = 0; a < 2; ++a) {
    ArchState& st = arches[a];
    const int ofs = 32 * a;
    for (int i = 0; i < 15; ++i) {
      const double dx = p[ofs + 2 * (i + 1)] - p[ofs + 2 * i];
      const double dy = p[ofs + 2 * (i + 1) + 1] - p[ofs + 2 * i + 1];
      st.d[i] = std::hypot(dx, dy);
      if (st.d[i] == 0.0) {
        hit_coincident = true;
        st.ux[i] = 0.0;  // gradient of |.| pinned to 0 at the kink
        st.uy[i] = 0.0;
      } else {
        st.ux[i] = dx / st.d[i];
        st.uy[i] = dy / st.d[i];
      }
    }
    double sq = 0.0;
    for (int i = 1; i <= 13; ++i) {
      st.delta[i - 1] = st.d[i + 1] - 2.0 * st.d[i] + st.d[i - 1];
      sq += st.delta[i - 1] * st.delta[i - 1];
    }
    st.norm = std::sqrt(sq);
    value += squared ? sq : st.norm;
  }
  if (coincident != nullptr) *coincident = hit_coincident;

  return make_op_node(
      "dr_loss", Tensor::scalar(value), {predicted64.node()},
      [arches, squared](Node& out) {
        Node* in = out.parents[0].get();
        if (!in->requires_grad) return;
        const double g = out.grad[0];
        for (int a = 0; a < 2; ++a) {
          const ArchState& st = arches[a];
          const int ofs = 32 * a;
          double dd[15] = {0.0};
          for (int i = 1; i <= 13; ++i) {
            double c;
            if (squared) {
              c = 2.0 * st.delta[i - 1] * g;
            } else if (st.norm > 0.0) {
              c = st.delta[i - 1] / st.norm * g;
            } else {
              continue;  // norm has zero subgradient at its minimum
            }
            dd[i + 1] += c;
            dd[i] -= 2.0 * c;
            dd[i - 1] += c;
          }
          for (int j = 0; j < 15; ++j) {
            if (dd[j] == 0.0) continue;
            const double gx = dd[j] * st.ux[j];
            const double gy = dd[j] * st.uy[j];
            in->grad[ofs + 2 * (j + 1)] += gx;
            in->grad[ofs + 2 * j] -= gx;
            in->grad[ofs + 2 * (j + 1) + 1] += gy;
            in->grad[ofs + 2 * j + 1] -= gy;
          }
        }
      });
}

std::pair<Var, LossBreakdown> total_loss(const Var& center, const Var& dr,
                                         const Var& offset, const Var& box,
                                         const std::vector<Var>& trainable_params,
                                         const LossWeights& weights) {
  Var reg(Tensor::scalar(0.0));
  for (const Var& w : trainable_params)
    reg = ad::add(reg, ad::sum_squares(w));

  Var total = ad::add(center, dr);
  total = ad::add(total, ad::scale(offset, weights.alpha));
  total = ad::add(total, ad::scale(box, weights.beta));
  total = ad::add(total, ad::scale(reg, weights.gamma));

  LossBreakdown b;
  b.center = center.value()[0];
  b.dr = dr.value()[0];
  b.offset = offset.value()[0];
  b.box = box.value()[0];
  b.weight_reg = reg.value()[0];
  b.total = total.value()[0];
  return {total, b};
}

std::string metrics_csv_header() {
  return "step,center,dr,offset,box,weight_reg,total";
}

std::string metrics_csv_row(long step, const LossBreakdown& b) {
  std::ostringstream out;
  out.precision(17);
  out << step << ',' << b.center << ',' << b.dr << ',' << b.offset << ','
      << b.box << ',' << b.weight_reg << ',' << b.total;
  return out.str();
}

}  // namespace toothdet::losses
