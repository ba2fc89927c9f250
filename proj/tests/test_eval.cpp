#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "angiodit/core/error.hpp"
#include "angiodit/dataset/report.hpp"
#include "angiodit/dataset/synth.hpp"
#include "angiodit/eval/evaluate.hpp"
#include "angiodit/numerics/random.hpp"

using namespace angiodit;
using namespace angiodit::eval;
using dataset::Lesion;

namespace {

GaussianFit diag_fit(std::vector<double> mean, std::vector<double> diag) {
    GaussianFit g;
    g.mean = mean;
    const auto d = diag.size();
    g.cov.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) g.cov[i * d + i] = diag[i];
    return g;
}

// Closed form for 2x2 symmetric PSD A, B:
// Tr sqrt(A^1/2 B A^1/2) = sqrt(Tr(AB) + 2 sqrt(det A det B)).
double frechet_2x2(const GaussianFit& a, const GaussianFit& b) {
    const auto& A = a.cov;
    const auto& B = b.cov;
    const double tr_ab = A[0] * B[0] + A[1] * B[2] + A[2] * B[1] + A[3] * B[3];
    const double det_a = A[0] * A[3] - A[1] * A[2], det_b = B[0] * B[3] - B[1] * B[2];
    const double cross = std::sqrt(tr_ab + 2 * std::sqrt(det_a * det_b));
    const double dm0 = a.mean[0] - b.mean[0], dm1 = a.mean[1] - b.mean[1];
    return dm0 * dm0 + dm1 * dm1 + A[0] + A[3] + B[0] + B[3] - 2 * cross;
}

Tensor gaussian_rows(Rng& rng, std::int64_t n, std::int64_t d, double shift = 0, double stretch = 1) {
    Tensor t({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            t[i * d + j] = static_cast<Real>(shift + stretch * (j + 1) * rng.normal());
    return t;
}

// Direct 3x3 convolution with zero padding 1 followed by ReLU.
std::vector<double> naive_layer(const std::vector<double>& in, std::int64_t c, std::int64_t h, std::int64_t w,
                                const Tensor& wt, const Tensor& b, std::int64_t stride, std::int64_t& oh,
                                std::int64_t& ow) {
    const std::int64_t o = wt.dim(0);
    oh = h / stride;
    ow = w / stride;
    std::vector<double> out(static_cast<std::size_t>(o * oh * ow));
    for (std::int64_t k = 0; k < o; ++k)
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t x = 0; x < ow; ++x) {
                double s = b[k];
                for (std::int64_t ci = 0; ci < c; ++ci)
                    for (std::int64_t dy = 0; dy < 3; ++dy)
                        for (std::int64_t dx = 0; dx < 3; ++dx) {
                            const std::int64_t yy = y * stride + dy - 1, xx = x * stride + dx - 1;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            s += wt[((k * c + ci) * 3 + dy) * 3 + dx] * in[static_cast<std::size_t>((ci * h + yy) * w + xx)];
                        }
                out[static_cast<std::size_t>((k * oh + y) * ow + x)] = std::max(s, 0.0);
            }
    return out;
}

double naive_perceptual(const VideoClip& a, const VideoClip& b, const PerceptualNet& net) {
    double total = 0;
    for (std::int64_t t = 0; t < a.frames(); ++t) {
        std::vector<double> fa, fb;
        for (std::int64_t y = 0; y < a.height(); ++y)
            for (std::int64_t x = 0; x < a.width(); ++x) {
                fa.push_back(a.at(0, t, y, x));
                fb.push_back(b.at(0, t, y, x));
            }
        std::int64_t c = 1, h = a.height(), w = a.width();
        for (std::size_t l = 0; l < net.weights().size(); ++l) {
            std::int64_t oh = 0, ow = 0;
            const std::int64_t stride = l == 0 ? 1 : 2;
            fa = naive_layer(fa, c, h, w, net.weights()[l], net.biases()[l], stride, oh, ow);
            fb = naive_layer(fb, c, h, w, net.weights()[l], net.biases()[l], stride, oh, ow);
            c = net.weights()[l].dim(0);
            h = oh;
            w = ow;
            double layer = 0;
            for (std::int64_t p = 0; p < h * w; ++p) {
                double na = 0, nb = 0;
                for (std::int64_t k = 0; k < c; ++k) {
                    na += fa[static_cast<std::size_t>(k * h * w + p)] * fa[static_cast<std::size_t>(k * h * w + p)];
                    nb += fb[static_cast<std::size_t>(k * h * w + p)] * fb[static_cast<std::size_t>(k * h * w + p)];
                }
                na = std::sqrt(na) + kUnitNormEpsilon;
                nb = std::sqrt(nb) + kUnitNormEpsilon;
                for (std::int64_t k = 0; k < c; ++k) {
                    const double d = fa[static_cast<std::size_t>(k * h * w + p)] / na - fb[static_cast<std::size_t>(k * h * w + p)] / nb;
                    layer += d * d;
                }
            }
            total += layer / static_cast<double>(h * w);
        }
    }
    return total / static_cast<double>(a.frames());
}

VideoClip noise_clip(Rng& rng, std::int64_t t, std::int64_t h, std::int64_t w) {
    VideoClip v(1, t, h, w);
    for (auto& x : v.data.values()) x = rng.uniform(0.0f, 1.0f);
    return v;
}

}  // namespace

TEST_CASE("frechet distance: closed-form examples") {
    CHECK(frechet_distance(diag_fit({0}, {1}), diag_fit({1}, {1})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(frechet_distance(diag_fit({0, 0}, {1, 4}), diag_fit({0, 0}, {4, 1})) == doctest::Approx(2.0).epsilon(1e-9));
    // 1-D: (m1-m2)^2 + (s1-s2)^2
    CHECK(frechet_distance(diag_fit({0.5}, {9}), diag_fit({-1}, {4})) == doctest::Approx(2.25 + 1.0).epsilon(1e-9));
}

TEST_CASE("frechet distance matches the 2x2 closed form on correlated fits") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor xa({50, 2}), xb({50, 2});
        for (std::int64_t i = 0; i < 50; ++i) {
            const Real u = rng.normal(), v = rng.normal();
            xa[2 * i] = u;
            xa[2 * i + 1] = 0.7f * u + 0.3f * v + 1.0f;
            const Real p = rng.normal(), q = rng.normal();
            xb[2 * i] = 2 * p - q;
            xb[2 * i + 1] = 0.5f * q;
        }
        const auto a = fit_gaussian(xa), b = fit_gaussian(xb);
        CHECK(frechet_distance(a, b) == doctest::Approx(frechet_2x2(a, b)).epsilon(1e-8));
    }
}

TEST_CASE("frechet distance: identity, symmetry and rotation invariance") {
    Rng rng(11);
    const Tensor x = gaussian_rows(rng, 200, 6);
    const Tensor y = gaussian_rows(rng, 200, 6, 0.3, 1.5);
    const auto fx = fit_gaussian(x), fy = fit_gaussian(y);
    CHECK(frechet_distance(fx, fx) <= 1e-6);
    CHECK(frechet_distance(fx, fy) == doctest::Approx(frechet_distance(fy, fx)).epsilon(1e-9));

    // Random orthogonal matrix by Gram-Schmidt.
    const std::int64_t d = 6;
    std::vector<double> q(d * d);
    for (auto& v : q) v = rng.normal();
    for (std::int64_t i = 0; i < d; ++i) {
        for (std::int64_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::int64_t k = 0; k < d; ++k) dot += q[i * d + k] * q[j * d + k];
            for (std::int64_t k = 0; k < d; ++k) q[i * d + k] -= dot * q[j * d + k];
        }
        double n = 0;
        for (std::int64_t k = 0; k < d; ++k) n += q[i * d + k] * q[i * d + k];
        for (std::int64_t k = 0; k < d; ++k) q[i * d + k] /= std::sqrt(n);
    }
    auto rotate = [&](const Tensor& t) {
        Tensor r(t.shape());
        for (std::int64_t i = 0; i < t.dim(0); ++i)
            for (std::int64_t a = 0; a < d; ++a) {
                double s = 0;
                for (std::int64_t k = 0; k < d; ++k) s += q[a * d + k] * t[i * d + k];
                r[i * d + a] = static_cast<Real>(s);
            }
        return r;
    };
    const double base = frechet_distance(fx, fy);
    CHECK(frechet_distance(fit_gaussian(rotate(x)), fit_gaussian(rotate(y))) == doctest::Approx(base).epsilon(1e-4));
}

TEST_CASE("fit_gaussian: unbiased covariance and conditional regularization") {
    const Tensor x({3, 1}, {1.0f, 2.0f, 6.0f});
    const auto g = fit_gaussian(x);
    CHECK(g.mean[0] == doctest::Approx(3.0));
    CHECK(g.cov[0] == doctest::Approx(7.0));  // ((-2)^2 + 1 + 9) / 2

    const Tensor few({2, 3}, {1, 2, 3, 1, 2, 3});
    const auto r = fit_gaussian(few);
    for (int i = 0; i < 3; ++i) CHECK(r.cov[static_cast<std::size_t>(i * 4)] == doctest::Approx(kCovarianceEpsilon));
    CHECK(frechet_distance(r, r) <= 1e-6);

    CHECK_THROWS_AS(fit_gaussian(Tensor({1, 3})), ShapeError);
    CHECK_THROWS_AS(fit_gaussian(Tensor({4})), ShapeError);
    CHECK_THROWS_AS(frechet_distance(diag_fit({0}, {1}), diag_fit({0, 0}, {1, 1})), ShapeError);
}

TEST_CASE("perceptual distance matches a direct loop and is a symmetric premetric") {
    Rng rng(5);
    const PerceptualNet net(7);
    const VideoClip a = noise_clip(rng, 2, 16, 16), b = noise_clip(rng, 2, 16, 16);
    const double d = perceptual_patch_distance(a, b, net);
    CHECK(d > 0);
    CHECK(std::abs(d - naive_perceptual(a, b, net)) <= 1e-5);
    CHECK(perceptual_patch_distance(b, a, net) == doctest::Approx(d).epsilon(1e-9));
    CHECK(perceptual_patch_distance(a, a, net) == 0.0);
    CHECK_THROWS_AS(perceptual_patch_distance(a, noise_clip(rng, 2, 8, 8), net), ShapeError);
}

TEST_CASE("report similarity: hand-computed toy case") {
    // Token 0 = (1,0), 1 = (0,1), 2 = (1,1)/sqrt2 direction.
    const Tensor table({3, 2}, {1, 0, 0, 1, 1, 1});
    const double c = 1.0 / std::sqrt(2.0);
    // candidate {0, 1}, reference {2}: each candidate matches 2 at cos = c.
    const auto s = report_similarity({0, 1}, {2}, table);
    CHECK(s.precision == doctest::Approx(c));
    CHECK(s.recall == doctest::Approx(c));
    CHECK(s.f1 == doctest::Approx(c));
    // candidate {0, 2}, reference {0, 1}: P = (1 + c)/2, R = (1 + c)/2.
    const auto t = report_similarity({0, 2}, {0, 1}, table);
    CHECK(t.precision == doctest::Approx((1 + c) / 2));
    CHECK(t.recall == doctest::Approx((1 + c) / 2));
    const auto self = report_similarity({0, 1, 2}, {0, 1, 2}, table);
    CHECK(self.f1 == doctest::Approx(1.0));
    CHECK_THROWS_AS(report_similarity({5}, {0}, table), ShapeError);
}

TEST_CASE("recall@k: self match, chance level, monotonicity, bad k") {
    Rng rng(21);
    const Tensor x = gaussian_rows(rng, 100, 16);
    CHECK(recall_at_k(x, x, 1) == 1.0);
    CHECK_THROWS_AS(recall_at_k(x, x, 101), ConfigError);
    CHECK_THROWS_AS(recall_at_k(x, x, 0), ConfigError);

    const double sigma = std::sqrt(0.05 * 0.95 / 100.0);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(1000 + seed);
        const Tensor g = gaussian_rows(r, 100, 16), h = gaussian_rows(r, 100, 16);
        const double r5 = recall_at_k(g, h, 5);
        CHECK(std::abs(r5 - 0.05) <= 3 * sigma);
        double prev = 0;
        for (std::int64_t k : {1L, 5L, 10L, 50L, 100L}) {
            const double v = recall_at_k(g, h, k);
            CHECK(v >= prev);
            prev = v;
        }
        CHECK(prev == 1.0);
    }
}

TEST_CASE("recall@k breaks ties by ascending index") {
    // All gt rows identical: row i is found in the top k only when i < k.
    const Tensor gen({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
    CHECK(recall_at_k(gen, gen, 1) == doctest::Approx(0.25));
    CHECK(recall_at_k(gen, gen, 3) == doctest::Approx(0.75));
}

TEST_CASE("binomial upper tail") {
    CHECK(binomial_upper_tail(0, 10, 0.5) == doctest::Approx(1.0));
    CHECK(binomial_upper_tail(10, 10, 0.5) == doctest::Approx(std::pow(0.5, 10)));
    CHECK(binomial_upper_tail(9, 10, 0.5) == doctest::Approx(11.0 / 1024.0));
    CHECK(binomial_upper_tail(42, 64, 0.5) < 0.01);
    CHECK(binomial_upper_tail(40, 64, 0.5) > 0.01);
}

TEST_CASE("feature extractors") {
    Rng rng(2);
    const RandomProjectionExtractor proj(4);
    const VideoClip a = noise_clip(rng, 3, 8, 8);
    const Tensor fa = proj.extract(a);
    CHECK(fa.numel() == 64);
    CHECK(max_abs_diff(fa, proj.extract(a)) == 0.0f);
    VideoClip twice = a;
    for (auto& v : twice.data.values()) v *= 2;
    const Tensor f2 = proj.extract(twice);
    for (std::int64_t i = 0; i < 64; ++i) CHECK(f2[i] == doctest::Approx(2 * fa[i]).epsilon(1e-5));

    wfvae::VaeConfig cfg;
    auto vae = std::make_shared<const wfvae::WfVae>(cfg, 1);
    const VaePooledExtractor pooled(vae);
    CHECK(pooled.dim() == 4);
    const VideoClip clip = noise_clip(rng, 9, 32, 32);
    const Tensor pf = pooled.extract(clip);
    const Tensor mu = vae->encode(clip).mu.value();
    double s0 = 0;
    for (std::int64_t i = 0; i < mu.numel() / 4; ++i) s0 += mu[i];
    CHECK(pf[0] == doctest::Approx(s0 / (mu.numel() / 4)).epsilon(1e-5));

    const Tensor all = extract_all(proj, {a, twice});
    CHECK(all.shape() == Shape{2, 64});
}

namespace {

std::vector<ProbeExample> probe_examples(std::uint64_t seed, std::int64_t n, const ProbeConfig& cfg) {
    std::vector<ProbeExample> out;
    Rng rng(seed);
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<Lesion> lesions;
        for (auto l : cfg.lesions)
            if (rng.bernoulli(0.5)) lesions.push_back(l);
        const auto c = dataset::SyntheticCase::random(seed * 100000 + static_cast<std::uint64_t>(i), lesions);
        out.push_back({dataset::synth_render(c, cfg.frames, cfg.height, cfg.width), lesions, c.laterality});
    }
    return out;
}

}  // namespace

TEST_CASE("lesion probe: held-out accuracy, copy alignment and noise floor") {
    ProbeConfig cfg;
    cfg.frames = 9;
    cfg.height = 32;
    cfg.width = 32;
    LesionProbe probe(cfg, 3);
    CHECK_FALSE(probe.trained());
    const auto train = probe_examples(1, 3000, cfg);
    const auto held = probe_examples(2, 96, cfg);
    ProbeTrainOptions opts;
    const auto t0 = std::chrono::steady_clock::now();
    const auto history = probe.train(train, opts);
    MESSAGE("probe training: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s, loss "
                               << history.front() << " -> " << history.back());
    CHECK(probe.trained());

    const auto acc = probe.per_lesion_accuracy(held);
    double mean_acc = 0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        INFO(std::string(dataset::lesion_name(cfg.lesions[i])));
        CHECK(acc[i] >= 0.9);
        mean_acc += acc[i] / static_cast<double>(acc.size());
    }

    std::vector<VideoClip> videos;
    std::vector<std::vector<Lesion>> prompts;
    for (const auto& e : held) {
        videos.push_back(e.video);
        prompts.push_back(e.lesions);
    }
    const auto copy = lesion_probe_alignment(videos, prompts, probe);
    CHECK(copy.alignment == doctest::Approx(mean_acc).epsilon(1e-12));

    // Noise against balanced prompts: each lesion named for exactly half.
    Rng rng(9);
    std::vector<VideoClip> noise;
    std::vector<std::vector<Lesion>> balanced;
    for (int i = 0; i < 64; ++i) {
        noise.push_back(noise_clip(rng, cfg.frames, cfg.height, cfg.width));
        std::vector<Lesion> p;
        for (std::size_t l = 0; l < cfg.lesions.size(); ++l)
            if (((i >> (l % 6)) & 1) != 0) p.push_back(cfg.lesions[l]);
        balanced.push_back(p);
    }
    const auto floor = lesion_probe_alignment(noise, balanced, probe);
    CHECK(std::abs(floor.alignment - 0.5) <= 0.1);

    CHECK_THROWS_AS(probe.read(noise_clip(rng, 5, 32, 32)), ShapeError);
    const LesionProbe adopted(cfg, probe.params());
    const auto r0 = probe.read(held[0].video), r1 = adopted.read(held[0].video);
    CHECK(r0.lesion_prob == r1.lesion_prob);
}

TEST_CASE("probe configuration is validated") {
    ProbeConfig c;
    c.height = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    ProbeConfig d;
    d.lesions = {Lesion::Leakage, Lesion::Leakage};
    CHECK_THROWS_AS(d.validate(), ConfigError);
    ProbeConfig e;
    e.lesions.clear();
    CHECK_THROWS_AS(LesionProbe(e, 0), ConfigError);
}

TEST_CASE("evaluate_cases: copy stub and error isolation") {
    ProbeConfig cfg;
    cfg.frames = 5;
    cfg.height = 16;
    cfg.width = 16;
    cfg.lesions = {Lesion::Leakage, Lesion::NonPerfusion};
    LesionProbe probe(cfg, 1);
    probe.mark_trained();
    std::vector<EvalCase> cases;
    for (int i = 0; i < 12; ++i) {
        const std::vector<Lesion> l{i % 2 == 0 ? Lesion::Leakage : Lesion::NonPerfusion};
        const auto c = dataset::SyntheticCase::random(static_cast<std::uint64_t>(i), l);
        const VideoClip v = dataset::synth_render(c, 5, 16, 16);
        cases.push_back({v, v, dataset::lesion_tokens(l, c.laterality), l});
    }
    const RandomProjectionExtractor proj(0);
    const PerceptualNet net(0);
    Rng rng(4);
    const Tensor table = rng.normal_tensor({dataset::Vocabulary::standard().size(), 8});
    EvalSettings settings;
    const MetricsReport r = evaluate_cases(cases, proj, probe, net, table, settings);
    CHECK(std::abs(r.frechet) <= 1e-4);
    CHECK(r.perceptual_mean == 0.0);
    CHECK(r.recall_at.at(5) == 1.0);
    CHECK(r.recall_at.at(10) == 1.0);
    CHECK(r.recall_at.count(50) == 0);
    CHECK(r.errors.count("recall@50") == 1);
    CHECK(r.probe_trials == 12);

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["extractor"] == "rand-proj");
    CHECK(j["errors"].contains("recall@50"));
    CHECK(j["recall_at"]["5"] == 1.0);
    CHECK(j.contains("alignment_metric"));

    LesionProbe untrained(cfg, 1);
    const MetricsReport u = evaluate_cases(cases, proj, untrained, net, table, settings);
    CHECK(u.errors.count("probe_alignment") == 1);
    CHECK(u.recall_at.at(5) == 1.0);
}
