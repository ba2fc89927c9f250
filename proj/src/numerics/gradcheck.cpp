#include "angiodit/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "angiodit/core/error.hpp"

namespace angiodit {

GradCheckResult check_gradients(const std::function<Variable()>& objective, ParamStore& params,
                                const GradCheckOptions& options) {
    GradientMap analytic;
    {
        Variable loss = objective();
        analytic = backward(loss, params);
    }
    auto evaluate = [&] {
        NoGradGuard guard;
        return objective().scalar();
    };

    Rng rng(options.seed);
    GradCheckResult result;
    for (const auto& [path, param] : params) {
        Variable p = param;
        Tensor& w = p.mutable_value();
        const std::int64_t n = w.numel();
        std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
        if (n > options.samples_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng.engine());
            coords.resize(static_cast<std::size_t>(options.samples_per_param));
        }
        for (auto i : coords) {
            const Real original = w[i];
            const Real hi = static_cast<Real>(original + options.step);
            const Real lo = static_cast<Real>(original - options.step);
            w[i] = hi;
            const double f_hi = evaluate();
            w[i] = lo;
            const double f_lo = evaluate();
            w[i] = original;
            const double numeric = (f_hi - f_lo) / (static_cast<double>(hi) - lo);
            const double a = analytic.at(path)[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            const double rel = std::abs(a - numeric) / denom;
            ++result.checked;
            if (!std::isfinite(rel)) throw NumericError("non-finite gradient check at " + path);
            if (rel > result.max_rel_error || result.worst_param.empty()) {
                result.max_rel_error = std::max(rel, result.max_rel_error);
                if (rel >= result.max_rel_error) {
                    result.worst_param = path + "[" + std::to_string(i) + "]";
                    result.worst_analytic = a;
                    result.worst_numeric = numeric;
                }
            }
        }
    }
    return result;
}

}  // namespace angiodit
