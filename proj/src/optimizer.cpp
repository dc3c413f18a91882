#include "toothdet/autodiff/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace toothdet::ad {

void Optimizer::step(const std::vector<NamedParam>& params) {
  begin_step();
  for (const auto& e : params) {
    Node* n = e.var.node().get();
    if (!n->requires_grad) continue;
    if (!n->grad_live)
      throw std::logic_error("optimizer step: parameter '" + e.name +
                             "' has no gradient; backward never reached it");
    update(*n);
    n->zero_grad();
  }
}

void Sgd::update(Node& p) {
  for (int i = 0; i < p.value.numel(); ++i)
    p.value[i] -= cfg_.lr * p.grad[i];
}

void Adam::update(Node& p) {
  auto [it, fresh] = state_.try_emplace(&p);
  Tensor& m = it->second.first;
  Tensor& v = it->second.second;
  if (fresh) {
    m = Tensor(p.value.shape());
    v = Tensor(p.value.shape());
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < p.value.numel(); ++i) {
    const double g = p.grad[i];
    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace toothdet::ad
