#pragma once

#include <cstdint>
#include <random>

#include "angiodit/numerics/tensor.hpp"

namespace angiodit {

// Seeded generator. Every stochastic step in the pipeline takes one of these
// explicitly so runs are reproducible per seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent stream derived from (seed, stream) by a splitmix64 hash.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    Real normal() { return normal_(engine_); }
    Real uniform() { return uniform_(engine_); }
    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform_(engine_); }
    // Uniform integer in [0, n).
    std::int64_t index(std::int64_t n);
    bool bernoulli(double p) { return uniform_(engine_) < p; }
    std::uint64_t next_u64() { return engine_(); }

    void fill_normal(Tensor& t, Real mean = 0.0f, Real stddev = 1.0f);
    Tensor normal_tensor(const Shape& shape, Real stddev = 1.0f);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<Real> normal_{0.0f, 1.0f};
    std::uniform_real_distribution<Real> uniform_{0.0f, 1.0f};
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace angiodit
