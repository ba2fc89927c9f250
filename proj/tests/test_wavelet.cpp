#include <doctest.h>

#include <cmath>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/random.hpp"
#include "angiodit/wavelet/haar.hpp"

using namespace angiodit;
using namespace angiodit::wavelet;

namespace {

double relative_energy_gap(const Tensor& x, const WaveletPyramid& p) {
    const double ex = sum_squares(x);
    return std::abs(ex - p.energy()) / ex;
}

}  // namespace

TEST_CASE("constant video has zero detail and scaled top band") {
    const Real c = 0.37f;
    Tensor x({1, 8, 8, 8}, c);
    for (int levels = 1; levels <= 3; ++levels) {
        auto p = dwt3d(x, levels);
        REQUIRE(p.bands.size() == static_cast<std::size_t>(levels));
        for (const auto& level : p.bands)
            for (int b = 1; b < kBandCount; ++b)
                for (Real v : level[static_cast<std::size_t>(b)].values()) CHECK(v == 0);
        const double expected = c * std::pow(std::sqrt(2.0), 3 * levels);
        for (Real v : p.top.values()) CHECK(v == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("analytic pair along one axis") {
    // (3, 1) along w, constant along h and t: divide out the h and t gains.
    Tensor x({2, 2, 2});
    for (int t = 0; t < 2; ++t)
        for (int y = 0; y < 2; ++y) {
            x[(t * 2 + y) * 2 + 0] = 3;
            x[(t * 2 + y) * 2 + 1] = 1;
        }
    auto p = dwt3d(x, 1);
    const double hw_gain = 2.0;  // sqrt(2) for h times sqrt(2) for t
    CHECK(p.top[0] / hw_gain == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-6));
    CHECK(p.bands[0][1][0] / hw_gain == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
    for (int b = 2; b < kBandCount; ++b) CHECK(std::abs(p.bands[0][static_cast<std::size_t>(b)][0]) < 1e-6);
}

TEST_CASE("round trip, Parseval and critical sampling on random clips") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rng.normal_tensor({1, 8, 8, 8});
        auto p = dwt3d(x, 2);
        CHECK(p.coefficient_count() == x.numel());
        CHECK(p.top.shape() == Shape{1, 2, 2, 2});
        CHECK(p.bands[0][3].shape() == Shape{1, 4, 4, 4});
        CHECK(max_abs_diff(idwt3d(p), x) <= 1e-5);
        CHECK(relative_energy_gap(x, p) <= 1e-4);
    }
}

TEST_CASE("analysis is linear") {
    Rng rng(5);
    Tensor x = rng.normal_tensor({2, 4, 8, 4});
    Tensor y = rng.normal_tensor({2, 4, 8, 4});
    const Real a = 1.5f, b = -0.25f;
    Tensor z(x.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = a * x[i] + b * y[i];
    auto px = dwt3d(x, 2), py = dwt3d(y, 2), pz = dwt3d(z, 2);
    double worst = 0;
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t band = 0; band < 8; ++band) {
            const Tensor& bz = pz.bands[l][band];
            for (std::int64_t i = 0; i < bz.numel(); ++i)
                worst = std::max(worst, std::abs(static_cast<double>(bz[i]) - a * px.bands[l][band][i] - b * py.bands[l][band][i]));
        }
    CHECK(worst <= 1e-5);
}

TEST_CASE("zero pyramid and single-coefficient synthesis") {
    Tensor x({1, 4, 4, 4});
    auto p = dwt3d(x, 2);
    const Tensor zero = idwt3d(p);
    for (Real v : zero.values()) CHECK(v == 0);

    // A unit top coefficient synthesizes to a 4x4x4 block of 1/sqrt(2)^6.
    Tensor big({1, 8, 8, 8});
    auto q = dwt3d(big, 2);
    q.top[(0 * 2 + 1) * 2 + 0] = 1;  // (t=0, h=1, w=0) in the 2x2x2 top band
    Tensor out = idwt3d(q);
    const double amp = 1.0 / 8.0;
    for (int t = 0; t < 8; ++t)
        for (int y = 0; y < 8; ++y)
            for (int w = 0; w < 8; ++w) {
                const bool inside = t < 4 && y >= 4 && w < 4;
                CHECK(out[(t * 8 + y) * 8 + w] == doctest::Approx(inside ? amp : 0.0).epsilon(1e-6));
            }
}

TEST_CASE("divisibility and consistency errors") {
    CHECK_THROWS_AS(dwt3d(Tensor({1, 9, 8, 8}), 2), ShapeError);
    CHECK_THROWS_AS(dwt3d(Tensor({1, 8, 6, 8}), 2), ShapeError);
    CHECK_THROWS_AS(dwt3d(Tensor({8, 8}), 1), ShapeError);
    try {
        dwt3d(Tensor({1, 9, 8, 8}), 2);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("divisible by 2^2") != std::string::npos);
    }
    auto p = dwt3d(Tensor({1, 8, 8, 8}), 2);
    p.bands[1][5] = Tensor({1, 2, 2, 3});
    CHECK_THROWS_AS(idwt3d(p), ShapeError);
}

TEST_CASE("causal low-pass handles odd frame counts and stays causal") {
    Rng rng(3);
    Tensor x = rng.normal_tensor({1, 9, 4, 4});
    Tensor lo = haar_lowpass(x, {}, true);
    CHECK(lo.shape() == Shape{1, 5, 2, 2});
    // Frame 0 is paired with its own copy.
    Tensor first = haar_lowpass(Tensor(Shape{1, 1, 4, 4}, std::span<const Real>(x.data(), 16)), {}, true);
    for (int i = 0; i < 4; ++i) CHECK(lo[i] == doctest::Approx(first[i]));
    Tensor y = x;
    for (int i = 0; i < 16; ++i) y[8 * 16 + i] += 1;  // touch the last frame only
    Tensor ly = haar_lowpass(y, {}, true);
    for (int k = 0; k < 4; ++k)
        for (int i = 0; i < 4; ++i) CHECK(ly[k * 4 + i] == lo[k * 4 + i]);
    CHECK_THROWS_AS(haar_lowpass(x, {}, false), ShapeError);
}

TEST_CASE("low-pass synthesis inverts the low-pass step on smooth input") {
    // Piecewise constant on 2x2x2 blocks (with the causal first-frame rule)
    // lives entirely in the low band, so synthesis reproduces it.
    Tensor coarse = Rng(9).normal_tensor({1, 3, 2, 2});
    Variable up = haar_lowpass_synthesis(Variable(coarse), {}, true);
    CHECK(up.shape() == Shape{1, 5, 4, 4});
    Tensor back = haar_lowpass(up.value(), {}, true);
    CHECK(max_abs_diff(back, coarse) < 1e-5);

    Variable sp = haar_lowpass_synthesis(Variable(coarse), {false, true, true});
    CHECK(sp.shape() == Shape{1, 3, 4, 4});
    CHECK(max_abs_diff(haar_lowpass(sp.value(), {false, true, true}), coarse) < 1e-5);
}
