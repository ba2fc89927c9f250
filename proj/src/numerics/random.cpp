#include "angiodit/numerics/random.hpp"

namespace angiodit {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

std::int64_t Rng::index(std::int64_t n) {
    std::uniform_int_distribution<std::int64_t> dist(0, n - 1);
    return dist(engine_);
}

void Rng::fill_normal(Tensor& t, Real mean, Real stddev) {
    for (Real& v : t.values()) v = mean + stddev * normal();
}

Tensor Rng::normal_tensor(const Shape& shape, Real stddev) {
    Tensor t(shape);
    fill_normal(t, 0.0f, stddev);
    return t;
}

}  // namespace angiodit
