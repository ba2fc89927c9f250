#pragma once

#include <map>
#include <string>

#include "angiodit/numerics/params.hpp"

namespace angiodit {

struct AdamConfig {
    Real lr = 1e-3f;
    Real beta1 = 0.9f;
    Real beta2 = 0.999f;
    Real eps = 1e-8f;
    // Global gradient-norm clip; non-positive disables.
    Real clip_norm = 1.0f;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(ParamStore& params, const GradientMap& grads);
    std::int64_t steps() const { return step_; }
    void set_lr(Real lr) { config_.lr = lr; }
    const AdamConfig& config() const { return config_; }

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace angiodit
