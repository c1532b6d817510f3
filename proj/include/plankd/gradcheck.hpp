#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plankd/tensor.hpp"

namespace plankd::grad {

// Central-difference verification of reverse-mode gradients.
//
// build_loss must rebuild the scalar loss from the current parameter values
// and be deterministic; the analytic gradient of each parameter entry is
// compared against (f(x+h) - f(x-h)) / 2h with h = 1e-5. Returns the maximum
// relative error  |a - n| / max(1e-8, |a| + |n|)  over all entries; entries
// where both |a| and |n| are below 1e-10 are skipped (kink guard).
double grad_check(const std::function<Tensor()>& build_loss, std::vector<Tensor>& params,
                  double step = 1e-5);

}  // namespace plankd::grad
