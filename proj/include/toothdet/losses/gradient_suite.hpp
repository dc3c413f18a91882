#pragma once

#include <cstdint>
#include <vector>

#include "toothdet/autodiff/gradcheck.hpp"

namespace toothdet::losses {

/// Central finite-difference sweep over every differentiable op and every
/// loss, `rounds` independent random fixtures per row. Each row reports the
/// worst relative error seen and the number of elements checked; everything
/// derives from `seed`, so the table is identical across runs.
///
/// `corrupt_dr` appends a row that wraps the distance regularizer in an
/// intentionally wrong backward pass. That row must come back failing; it
/// exists to prove the harness can see a broken gradient at all.
std::vector<ad::GradCheckRow> run_gradient_suite(uint64_t seed, int rounds,
                                                 bool corrupt_dr = false);

}  // namespace toothdet::losses
