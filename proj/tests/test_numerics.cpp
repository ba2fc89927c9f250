#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/gradcheck.hpp"
#include "angiodit/numerics/memory.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/params.hpp"

using namespace angiodit;

namespace {

// Direct nested-loop causal convolution used as the oracle.
Tensor naive_causal_conv(const Tensor& x, const Tensor& w, const Tensor& b, ops::Stride3 s) {
    const auto N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const auto O = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    const auto To = (T - 1) / s.t + 1, Ho = H / s.h, Wo = W / s.w;
    Tensor y({N, O, To, Ho, Wo});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t t = 0; t < To; ++t)
                for (std::int64_t i = 0; i < Ho; ++i)
                    for (std::int64_t j = 0; j < Wo; ++j) {
                        double acc = b[o];
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t a = 0; a < kt; ++a)
                                for (std::int64_t p = 0; p < kh; ++p)
                                    for (std::int64_t q = 0; q < kw; ++q) {
                                        auto f = std::max<std::int64_t>(0, t * s.t - (kt - 1) + a);
                                        auto hi = i * s.h - (kh - 1) / 2 + p;
                                        auto wi = j * s.w - (kw - 1) / 2 + q;
                                        if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                        acc += double(w[(((o * C + c) * kt + a) * kh + p) * kw + q]) *
                                               x[(((n * C + c) * T + f) * H + hi) * W + wi];
                                    }
                        y[(((n * O + o) * To + t) * Ho + i) * Wo + j] = Real(acc);
                    }
    return y;
}

Variable leaf(Tensor t) { return Variable(std::move(t), false); }

}  // namespace

TEST_CASE("tensor invariants") {
    Tensor t({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(all_finite(t));
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
    t[0] = std::numeric_limits<Real>::quiet_NaN();
    CHECK_FALSE(all_finite(t));
    for (std::int64_t n : {1, 3, 17, 1000}) {
        Tensor u({n});
        CHECK(reinterpret_cast<std::uintptr_t>(u.data()) % kStorageAlignment == 0);
    }
}

TEST_CASE("causal_conv3d matches a direct convolution") {
    Rng rng(1);
    for (ops::Stride3 s : {ops::Stride3{1, 1, 1}, ops::Stride3{2, 2, 2}, ops::Stride3{1, 2, 2}}) {
        Tensor x = rng.normal_tensor({2, 3, 5, 6, 4});
        Tensor w = rng.normal_tensor({4, 3, 3, 3, 3});
        Tensor b = rng.normal_tensor({4});
        auto y = ops::causal_conv3d(leaf(x), leaf(w), leaf(b), s);
        CHECK(y.value().shape() == Shape{2, 4, (5 - 1) / s.t + 1, 6 / s.h, 4 / s.w});
        CHECK(max_abs_diff(y.value(), naive_causal_conv(x, w, b, s)) < 1e-4f);
    }
}

TEST_CASE("causal_conv3d delta kernel is the identity") {
    Rng rng(2);
    Tensor x = rng.normal_tensor({1, 1, 4, 5, 5});
    Tensor w({1, 1, 3, 3, 3}, 0.0f);
    w[(2 * 3 + 1) * 3 + 1] = 1.0f;  // current frame, spatial centre
    auto y = ops::causal_conv3d(leaf(x), leaf(w), leaf(Tensor({1}, 0.0f)));
    CHECK(max_abs_diff(y.value(), x) == 0.0f);
}

TEST_CASE("causal_conv3d on constants reproduces c*s") {
    const Real c = 0.7f;
    Tensor x({1, 1, 4, 3, 3}, c);
    // Temporal-only kernel: replicate past padding keeps every output exact.
    Tensor wt({1, 1, 3, 1, 1}, {0.5f, -1.25f, 2.0f});
    const Real s = 0.5f - 1.25f + 2.0f;
    auto y = ops::causal_conv3d(leaf(x), leaf(wt), leaf(Tensor({1}, 0.0f)));
    for (Real v : y.value().values()) CHECK(v == doctest::Approx(c * s).epsilon(1e-6));

    // Full 3x3x3 kernel: the spatially interior pixel sees no zero padding
    // at any frame, including the first.
    Rng rng(3);
    Tensor w = rng.normal_tensor({1, 1, 3, 3, 3});
    double ws = 0.0;
    for (Real v : w.values()) ws += v;
    auto y2 = ops::causal_conv3d(leaf(x), leaf(w), leaf(Tensor({1}, 0.0f)));
    Tensor oracle = naive_causal_conv(x, w, Tensor({1}, 0.0f), {});
    CHECK(max_abs_diff(y2.value(), oracle) < 1e-5f);
    for (int t = 0; t < 4; ++t) CHECK(y2.value()[t * 9 + 4] == doctest::Approx(c * ws).epsilon(1e-5));
}

TEST_CASE("causal_conv3d is causal in time") {
    Rng rng(4);
    Tensor x = rng.normal_tensor({1, 2, 7, 4, 4});
    Tensor w = rng.normal_tensor({3, 2, 3, 3, 3});
    Tensor b = rng.normal_tensor({3});
    for (ops::Stride3 s : {ops::Stride3{1, 1, 1}, ops::Stride3{2, 1, 1}}) {
        auto base = ops::causal_conv3d(leaf(x), leaf(w), leaf(b), s).value();
        for (std::int64_t tau = 0; tau < 7; ++tau) {
            Tensor xp = x;
            for (std::int64_t c = 0; c < 2; ++c)
                for (std::int64_t f = tau + 1; f < 7; ++f)
                    for (std::int64_t i = 0; i < 16; ++i) xp[(c * 7 + f) * 16 + i] += rng.normal() * 10.0f;
            auto pert = ops::causal_conv3d(leaf(xp), leaf(w), leaf(b), s).value();
            const std::int64_t to = base.dim(2);
            for (std::int64_t o = 0; o < 3; ++o)
                for (std::int64_t t = 0; t < to; ++t) {
                    if (t * s.t > tau) continue;
                    for (std::int64_t i = 0; i < 16; ++i) {
                        const auto k = (o * to + t) * 16 + i;
                        REQUIRE(base[k] == pert[k]);
                    }
                }
        }
    }
}

TEST_CASE("causal_conv3d rejects bad geometry") {
    Tensor x({1, 2, 3, 4, 4});
    CHECK_THROWS_AS(ops::causal_conv3d(leaf(x), leaf(Tensor({1, 3, 3, 3, 3})), Variable()), ShapeError);
    CHECK_THROWS_AS(ops::causal_conv3d(leaf(x), leaf(Tensor({1, 2, 2, 3, 3})), Variable()), ShapeError);
    CHECK_THROWS_AS(ops::causal_conv3d(leaf(x), leaf(Tensor({1, 2, 3, 3, 3})), Variable(), {1, 3, 1}),
                    ShapeError);
}

TEST_CASE("attention special cases") {
    Rng rng(5);
    SUBCASE("single key returns its value row") {
        Tensor q = rng.normal_tensor({1, 2, 3, 4});
        Tensor k = rng.normal_tensor({1, 2, 1, 4});
        Tensor v = rng.normal_tensor({1, 2, 1, 4});
        auto out = ops::attention(leaf(q), leaf(k), leaf(v)).value();
        for (int h = 0; h < 2; ++h)
            for (int i = 0; i < 3; ++i)
                for (int d = 0; d < 4; ++d) CHECK(out[(h * 3 + i) * 4 + d] == doctest::Approx(v[h * 4 + d]));
    }
    SUBCASE("equal logits average the values") {
        Tensor q({1, 1, 2, 3}, 0.0f);
        Tensor k = rng.normal_tensor({1, 1, 4, 3});
        Tensor v = rng.normal_tensor({1, 1, 4, 3});
        auto out = ops::attention(leaf(q), leaf(k), leaf(v)).value();
        for (int d = 0; d < 3; ++d) {
            const Real m = (v[d] + v[3 + d] + v[6 + d] + v[9 + d]) / 4.0f;
            CHECK(out[d] == doctest::Approx(m).epsilon(1e-6));
            CHECK(out[3 + d] == doctest::Approx(m).epsilon(1e-6));
        }
    }
    SUBCASE("random 1x1x2x2 matches a scalar loop") {
        Tensor q = rng.normal_tensor({1, 1, 2, 2});
        Tensor k = rng.normal_tensor({1, 1, 2, 2});
        Tensor v = rng.normal_tensor({1, 1, 2, 2});
        auto out = ops::attention(leaf(q), leaf(k), leaf(v)).value();
        for (int i = 0; i < 2; ++i) {
            double logits[2];
            for (int j = 0; j < 2; ++j)
                logits[j] = (double(q[i * 2]) * k[j * 2] + double(q[i * 2 + 1]) * k[j * 2 + 1]) / std::sqrt(2.0);
            const double e0 = std::exp(logits[0]), e1 = std::exp(logits[1]);
            for (int d = 0; d < 2; ++d) {
                const double ref = (e0 * v[d] + e1 * v[2 + d]) / (e0 + e1);
                CHECK(std::abs(out[i * 2 + d] - ref) < 1e-5);
            }
        }
    }
    SUBCASE("weight rows sum to one") {
        Tensor q = rng.normal_tensor({2, 3, 5, 8}, 3.0f);
        Tensor k = rng.normal_tensor({2, 3, 7, 8}, 3.0f);
        Tensor p = ops::attention_weights(q, k);
        for (std::int64_t r = 0; r < 2 * 3 * 5; ++r) {
            double s = 0.0;
            for (int j = 0; j < 7; ++j) s += p[r * 7 + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
    SUBCASE("mismatched extents are rejected") {
        CHECK_THROWS_AS(ops::attention(leaf(Tensor({1, 1, 2, 3})), leaf(Tensor({1, 1, 2, 4})),
                                       leaf(Tensor({1, 1, 2, 4}))),
                        ShapeError);
    }
}

TEST_CASE("layer_norm") {
    const Real eps = 1e-5f;
    SUBCASE("constant row maps to shift") {
        Tensor shift({4}, {0.1f, -0.2f, 0.3f, 0.4f});
        auto y = ops::layer_norm(leaf(Tensor({2, 4}, 3.0f)), leaf(Tensor({4}, 2.0f)), leaf(shift), eps).value();
        for (int r = 0; r < 2; ++r)
            for (int j = 0; j < 4; ++j) CHECK(y[r * 4 + j] == doctest::Approx(shift[j]));
    }
    SUBCASE("two-feature analytic case") {
        auto y = ops::layer_norm(leaf(Tensor({1, 2}, {1.0f, 3.0f})), Variable(), Variable(), eps).value();
        CHECK(std::abs(y[0] + 1.0f) < 1e-3f);
        CHECK(std::abs(y[1] - 1.0f) < 1e-3f);
    }
    SUBCASE("normalized row has zero mean and unit variance") {
        Rng rng(6);
        Tensor x = rng.normal_tensor({3, 64}, 4.0f);
        auto y = ops::layer_norm(leaf(x), Variable(), Variable(), eps).value();
        for (int r = 0; r < 3; ++r) {
            double m = 0.0, v = 0.0;
            for (int j = 0; j < 64; ++j) m += y[r * 64 + j];
            m /= 64;
            for (int j = 0; j < 64; ++j) v += (y[r * 64 + j] - m) * (y[r * 64 + j] - m);
            v /= 64;
            CHECK(std::abs(m) < 1e-4);
            CHECK(std::abs(v - 1.0) < 1e-4);
        }
    }
}

TEST_CASE("backward contract") {
    ParamStore params;
    Rng rng(7);
    Variable p = params.add_normal("p", {3, 2}, rng, 1.0f);
    Variable q = params.add_normal("q", {2}, rng, 1.0f);

    auto g = backward(ops::sum(p), params);
    for (Real v : g.at("p").values()) CHECK(v == 1.0f);
    for (Real v : g.at("q").values()) CHECK(v == 0.0f);

    CHECK_THROWS_AS(backward(ops::scale(p, 2.0f), params), ShapeError);

    // Deterministic given identical inputs.
    auto loss = [&] { return ops::mean(ops::gelu(ops::linear(p, params.at("p"), Variable()))); };
    (void)loss;
    auto f = [&] { return ops::sum(ops::mul(ops::silu(p), p)); };
    auto g1 = backward(f(), params);
    auto g2 = backward(f(), params);
    CHECK(max_abs_diff(g1.at("p"), g2.at("p")) == 0.0f);
}

TEST_CASE("upsample_nearest keeps the first frame single") {
    Tensor x({1, 1, 3, 1, 1}, {10.0f, 20.0f, 30.0f});
    auto y = ops::upsample_nearest(leaf(x), 2, 1).value();
    CHECK(y.shape() == Shape{1, 1, 5, 1, 1});
    const Real expect[] = {10, 20, 20, 30, 30};
    for (int i = 0; i < 5; ++i) CHECK(y[i] == expect[i]);
}
