#pragma once

#include <string>
#include <vector>

#include "angiodit/numerics/gradcheck.hpp"

namespace angiodit::verify {

inline constexpr double kGradientTolerance = 1e-3;

struct SuiteEntry {
    std::string name;
    GradCheckResult result;
    bool passed() const { return result.max_rel_error < kGradientTolerance; }
};

// Central finite-difference checks of every differentiable layer, one full
// diffusion transformer block, and the complete autoencoder and diffusion
// training losses, all at toy shapes. Meaningful only in the 64-bit build.
std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed = 11);

}  // namespace angiodit::verify
