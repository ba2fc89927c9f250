#include <doctest.h>

#include <cmath>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/memory.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/wavelet/haar.hpp"
#include "angiodit/wfvae/wfvae.hpp"

using namespace angiodit;
using namespace angiodit::wfvae;

namespace {

Tensor uniform_video(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform();
    return t;
}

// Constant frames with mild pixel noise, values kept inside [0, 1].
std::vector<Tensor> toy_videos(std::int64_t count, Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (std::int64_t i = 0; i < count; ++i) {
        Tensor t(shape);
        const Real level = rng.uniform(0.15f, 0.85f);
        for (auto& v : t.values()) v = level + 0.03f * rng.normal();
        out.push_back(std::move(t));
    }
    return out;
}

double eval_loss(const WfVae& vae, const std::vector<Tensor>& clips) {
    NoGradGuard guard;
    double total = 0;
    for (const auto& c : clips) {
        Variable x(c.reshaped({1, c.dim(0), c.dim(1), c.dim(2), c.dim(3)}));
        LatentStats st = vae.encode(x);
        total += vae_loss(x, vae.decode(st.mu), st, vae.config().kl_weight).scalar();
    }
    return total / static_cast<double>(clips.size());
}

}  // namespace

TEST_CASE("latent geometry follows the causal stride rule") {
    WfVae vae(VaeConfig{}, 1);
    NoGradGuard guard;
    Variable x(uniform_video({1, 1, 9, 32, 32}, 2));
    LatentStats st = vae.encode(x);
    CHECK(st.mu.shape() == Shape{1, 4, 5, 8, 8});
    CHECK(st.logvar.shape() == Shape{1, 4, 5, 8, 8});
    Variable y = vae.decode(st.mu);
    CHECK(y.shape() == Shape{1, 1, 9, 32, 32});
    CHECK(vae.config().latent_shape(21, 64, 64) == Shape{4, 11, 16, 16});
}

TEST_CASE("round-trip shape law across geometries") {
    NoGradGuard guard;
    for (std::int64_t ct : {1L, 2L, 4L}) {
        VaeConfig cfg;
        cfg.temporal_compression = ct;
        WfVae vae(cfg, 3);
        for (std::int64_t t : {std::int64_t{1}, 1 + ct, 1 + 2 * ct}) {
            for (std::int64_t hw : {8L, 16L}) {
                Variable x(uniform_video({2, 1, t, hw, hw + 4}, 4));
                LatentStats st = vae.encode(x);
                CHECK(st.mu.shape() == Shape{2, 4, (t - 1) / ct + 1, hw / 4, (hw + 4) / 4});
                CHECK(vae.decode(st.mu).shape() == x.shape());
            }
        }
    }
}

TEST_CASE("incompatible extents and configs are rejected") {
    WfVae vae(VaeConfig{}, 1);
    NoGradGuard guard;
    CHECK_THROWS_AS(vae.encode(Variable(Tensor({1, 1, 8, 32, 32}))), ShapeError);
    CHECK_THROWS_AS(vae.encode(Variable(Tensor({1, 1, 9, 30, 32}))), ShapeError);
    CHECK_THROWS_AS(vae.encode(Variable(Tensor({1, 2, 9, 32, 32}))), ShapeError);
    CHECK_THROWS_AS(vae.decode(Variable(Tensor({1, 3, 5, 8, 8}))), ShapeError);
    VaeConfig bad;
    bad.spatial_compression = 6;
    CHECK_THROWS_AS(WfVae(bad, 0), ConfigError);
    bad = VaeConfig{};
    bad.wavelet_levels = 3;
    CHECK_THROWS_AS(WfVae(bad, 0), ConfigError);
    bad = VaeConfig{};
    bad.channel_mult = {1, 2};
    CHECK_THROWS_AS(WfVae(bad, 0), ConfigError);
}

TEST_CASE("energy-flow shortcut alone carries the low-pass band") {
    VaeConfig cfg;
    WfVae vae(cfg, 7);
    ParamStore& p = vae.params();
    for (const auto& [name, v] : p) {
        if (name.rfind("enc.", 0) == 0) p.assign(name, Tensor(v.shape(), 0.0f));
    }
    // Identity projection of the single input channel onto every output channel.
    p.assign("enc.flow_out.w", Tensor(p.at("enc.flow_out.w").shape(), 1.0f));

    NoGradGuard guard;
    Tensor video = uniform_video({1, 1, 9, 16, 16}, 8);
    LatentStats st = vae.encode(Variable(video));
    Tensor low = wavelet::haar_lowpass(video, {true, true, true}, true);
    low = wavelet::haar_lowpass(low, {false, true, true}, true);
    const Tensor& mu = st.mu.value();
    const std::int64_t n = low.numel();
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t i = 0; i < n; ++i) CHECK(mu[c * n + i] == doctest::Approx(low[i]).epsilon(1e-6));

    // Adding pure detail (a checkerboard within each 2x2 block) leaves mu unchanged.
    Tensor detailed = video;
    for (std::int64_t t = 0; t < 9; ++t)
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x)
                detailed[(t * 16 + y) * 16 + x] += 0.01f * (((y + x) % 2) ? 1.0f : -1.0f);
    CHECK(max_abs_diff(vae.encode(Variable(detailed)).mu.value(), mu) < 1e-5);
}

TEST_CASE("encoder is causal in time") {
    WfVae vae(VaeConfig{}, 11);
    NoGradGuard guard;
    Tensor base = uniform_video({1, 1, 9, 16, 16}, 12);
    const Tensor mu0 = vae.encode(Variable(base)).mu.value();
    const std::int64_t tz = mu0.dim(2), plane = 4 * 4;
    for (std::int64_t tau = 0; tau < 8; ++tau) {
        Tensor pert = base;
        Rng rng(100 + static_cast<std::uint64_t>(tau));
        for (std::int64_t t = tau + 1; t < 9; ++t)
            for (std::int64_t i = 0; i < 256; ++i) pert[t * 256 + i] = rng.uniform();
        const Tensor mu1 = vae.encode(Variable(pert)).mu.value();
        const std::int64_t keep = vae.last_latent_frame_within(tau);
        bool same = true, later_changed = false;
        for (std::int64_t c = 0; c < 4; ++c)
            for (std::int64_t k = 0; k < tz; ++k)
                for (std::int64_t i = 0; i < plane; ++i) {
                    const std::int64_t j = (c * tz + k) * plane + i;
                    if (k <= keep) same = same && mu0[j] == mu1[j];
                    else later_changed = later_changed || mu0[j] != mu1[j];
                }
        CHECK(same);
        CHECK(later_changed);
    }
}

TEST_CASE("reparameterization") {
    LatentStats st;
    Rng r(5);
    st.mu = Variable(r.normal_tensor({1, 4, 2, 3, 3}));
    st.logvar = Variable(Tensor(st.mu.shape(), kLogvarMin));
    Rng a(1);
    CHECK(max_abs_diff(reparameterize(st, a), st.mu.value()) <= 1e-6);

    st.logvar = Variable(Tensor(st.mu.shape(), 0.3f));
    Rng b(9), c(9);
    CHECK(max_abs_diff(reparameterize(st, b), reparameterize(st, c)) == 0);

    LatentStats unit;
    unit.mu = Variable(Tensor({100000}, 0.0f));
    unit.logvar = Variable(Tensor({100000}, 0.0f));
    Rng d(77);
    Tensor z = reparameterize(unit, d);
    double mean = 0, sq = 0;
    for (Real v : z.values()) mean += v;
    mean /= 1e5;
    for (Real v : z.values()) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq / 1e5 - 1.0) < 0.05);
}

TEST_CASE("decoder output is squashed into [0, 1]") {
    WfVae vae(VaeConfig{}, 13);
    NoGradGuard guard;
    Rng rng(14);
    Variable z(rng.normal_tensor({1, 4, 3, 4, 4}, 5.0f));
    Tensor v = vae.decode(z).value();
    for (Real x : v.values()) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
}

TEST_CASE("vae loss") {
    Tensor video = uniform_video({1, 1, 3, 4, 4}, 15);
    LatentStats st;
    st.mu = Variable(Tensor({1, 4, 2, 1, 1}, 0.0f));
    st.logvar = Variable(Tensor({1, 4, 2, 1, 1}, 0.0f));
    CHECK(vae_loss(Variable(video), Variable(video), st, 1e-4f).scalar() == 0.0);
    st.mu = Variable(Tensor({1, 4, 2, 1, 1}, 1.0f));
    CHECK(vae_loss(Variable(video), Variable(video), st, 1.0f).scalar() == doctest::Approx(0.5).epsilon(1e-7));

    Rng rng(16);
    Tensor recon = uniform_video({1, 1, 3, 4, 4}, 17);
    st.mu = Variable(rng.normal_tensor({1, 4, 2, 1, 1}));
    st.logvar = Variable(rng.normal_tensor({1, 4, 2, 1, 1}));
    double se = 0, kl = 0;
    for (std::int64_t i = 0; i < video.numel(); ++i) se += std::pow(double(recon[i]) - video[i], 2);
    for (std::int64_t i = 0; i < 8; ++i) {
        const double m = st.mu.value()[i], lv = st.logvar.value()[i];
        const double term = 0.5 * (m * m + std::exp(lv) - lv - 1);
        CHECK(term >= 0.0);
        kl += term;
    }
    const double oracle = se / video.numel() + 0.3 * kl / 8;
    CHECK(vae_loss(Variable(video), Variable(recon), st, 0.3f).scalar() == doctest::Approx(oracle).epsilon(1e-6));
    CHECK_THROWS_AS(vae_loss(Variable(video), Variable(recon), st, -1.0f), ConfigError);
}

TEST_CASE("KL term is elementwise nonnegative") {
    Rng rng(18);
    for (int i = 0; i < 10000; ++i) {
        const double m = 3.0 * rng.normal(), lv = rng.uniform(kLogvarMin, kLogvarMax);
        CHECK(0.5 * (m * m + std::exp(lv) - lv - 1) >= 0.0);
    }
}

TEST_CASE("tiled decode agrees with the untiled decode") {
    WfVae vae(VaeConfig{}, 19);
    const std::int64_t r = vae.decoder_receptive_radius();
    Rng rng(20);
    Tensor z = rng.normal_tensor({4, 2, 16, 16});
    VideoClip full = vae.decode_clip(z);

    VideoClip single = vae.decode_tiled(z, {16, 16}, r);
    CHECK(max_abs_diff(single.data, full.data) == 0);

    VideoClip tiled = vae.decode_tiled(z, {8, 8}, r);
    CHECK(tiled.data.shape() == full.data.shape());
    CHECK(max_abs_diff(tiled.data, full.data) < 1e-3);
    VideoClip threaded = vae.decode_tiled(z, {5, 7}, r, 3);
    CHECK(max_abs_diff(threaded.data, full.data) < 1e-3);

    CHECK_THROWS_AS(vae.decode_tiled(z, {8, 8}, r - 1), ShapeError);
    try {
        vae.decode_tiled(z, {8, 8}, 0);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("receptive radius") != std::string::npos);
    }
}

TEST_CASE("tiled decode lowers peak memory") {
    WfVae vae(VaeConfig{}, 21);
    Rng rng(22);
    Tensor z = rng.normal_tensor({4, 1, 32, 32});
    MemoryStats::reset_peak();
    std::size_t base = MemoryStats::current();
    VideoClip full = vae.decode_clip(z);
    const std::size_t untiled = MemoryStats::peak() - base;
    base = MemoryStats::current();
    MemoryStats::reset_peak();
    VideoClip tiled = vae.decode_tiled(z, {8, 8}, vae.decoder_receptive_radius());
    const std::size_t tiled_peak = MemoryStats::peak() - base;
    CHECK(tiled_peak < untiled);
    CHECK(max_abs_diff(tiled.data, full.data) < 1e-3);
}

TEST_CASE("checkpointed parameters are adopted and validated") {
    WfVae a(VaeConfig{}, 23);
    WfVae b(VaeConfig{}, a.params());
    NoGradGuard guard;
    Variable x(uniform_video({1, 1, 5, 8, 8}, 24));
    CHECK(max_abs_diff(a.encode(x).mu.value(), b.encode(x).mu.value()) == 0);
    VaeConfig wider;
    wider.base_channels = 4;
    CHECK_THROWS_AS(WfVae(wider, a.params()), ConfigError);
}

TEST_CASE("training halves the loss on constant-plus-noise videos") {
    std::vector<Tensor> clips = toy_videos(32, {1, 5, 16, 16}, 25);
    WfVae vae(VaeConfig{}, 26);
    const double before = eval_loss(vae, clips);
    VaeTrainOptions opt;
    opt.steps = 200;
    opt.batch_size = 4;
    opt.seed = 27;
    auto history = train_vae(vae, clips, opt);
    CHECK(history.size() == 200);
    const double after = eval_loss(vae, clips);
    MESSAGE("vae loss before " << before << " after " << after);
    CHECK(after <= 0.5 * before);
}
