#pragma once

#include <functional>
#include <string>

#include "angiodit/numerics/params.hpp"

namespace angiodit {

struct GradCheckOptions {
    double step = 1e-3;
    // Coordinates sampled per parameter tensor (all if the tensor is smaller).
    int samples_per_param = 12;
    // Denominator floor of the relative error |a-n| / max(|a|, |n|, floor).
    double floor = 1e-2;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int checked = 0;
};

// Compares reverse-mode gradients of `objective` against central finite
// differences over sampled parameter coordinates. `objective` must rebuild
// the forward pass on every call and return a one-element tensor.
GradCheckResult check_gradients(const std::function<Variable()>& objective,
                                ParamStore& params, const GradCheckOptions& options = {});

}  // namespace angiodit
