#pragma once

#include <functional>
#include <string>
#include <vector>

#include "toothdet/autodiff/graph.hpp"

namespace toothdet::ad {

struct GradCheckRow {
  std::string label;
  double max_rel_err = 0.0;
  int checked = 0;
  bool pass(double tol) const { return max_rel_err <= tol; }
};

/// |a-b| scaled by max(1, |a|, |b|): relative where gradients are large,
/// absolute near zero where central differences bottom out in noise.
double relative_error(double a, double b);

/// Central-finite-difference check of d(build())/d(params). `build` must
/// rebuild the scalar loss from the parameters' current values on every
/// call; every element of every parameter is nudged by ±h. Analytic
/// gradients are taken from one backward sweep before the nudging starts.
GradCheckRow gradcheck(const std::string& label, const std::vector<Var>& params,
                       const std::function<Var()>& build, double h = 1e-5);

}  // namespace toothdet::ad
