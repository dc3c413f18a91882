#include "toothdet/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace toothdet::ad {

double relative_error(double a, double b) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / scale;
}

GradCheckRow gradcheck(const std::string& label,
                       const std::vector<Var>& params,
                       const std::function<Var()>& build, double h) {
  GradCheckRow row;
  row.label = label;

  for (const Var& p : params) p.node()->zero_grad();
  backward(build());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Var& p : params) analytic.push_back(p.grad());

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& values = params[pi].node()->value;
    for (int i = 0; i < values.numel(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = build().value()[0];
      values[i] = orig - h;
      const double down = build().value()[0];
      values[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      row.max_rel_err =
          std::max(row.max_rel_err, relative_error(analytic[pi][i], fd));
      ++row.checked;
    }
  }
  return row;
}

}  // namespace toothdet::ad
