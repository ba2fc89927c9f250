#include "angiodit/numerics/optim.hpp"

#include <cmath>

#include "angiodit/core/error.hpp"

namespace angiodit {

void Adam::step(ParamStore& params, const GradientMap& grads) {
    ++step_;
    double norm2 = 0.0;
    for (const auto& [_, g] : grads) norm2 += sum_squares(g);
    if (!std::isfinite(norm2)) throw NumericError("non-finite gradient at optimizer step " + std::to_string(step_));
    Real clip = 1.0f;
    if (config_.clip_norm > 0.0f && norm2 > static_cast<double>(config_.clip_norm) * config_.clip_norm) {
        clip = static_cast<Real>(config_.clip_norm / std::sqrt(norm2));
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const Real step_size = static_cast<Real>(config_.lr * std::sqrt(bc2) / bc1);

    for (const auto& [path, g] : grads) {
        Variable p = params.at(path);
        Moments& st = state_[path];
        if (st.m.empty()) {
            st.m = Tensor(p.shape(), 0.0f);
            st.v = Tensor(p.shape(), 0.0f);
        }
        Tensor& w = p.mutable_value();
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            const Real gi = g[i] * clip;
            st.m[i] = config_.beta1 * st.m[i] + (1.0f - config_.beta1) * gi;
            st.v[i] = config_.beta2 * st.v[i] + (1.0f - config_.beta2) * gi * gi;
            w[i] -= step_size * st.m[i] / (std::sqrt(st.v[i]) + config_.eps);
        }
    }
}

}  // namespace angiodit
