#include "angiodit/verify/gradient_suite.hpp"

#include <functional>

#include "angiodit/diffusion/diffusion.hpp"
#include "angiodit/dit/dit.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/wfvae/wfvae.hpp"

namespace angiodit::verify {

namespace {

// Replaces every parameter with fresh normal values so that zero-initialized
// gates and projections carry gradient signal.
void randomize(ParamStore& ps, Rng& rng, Real stddev) {
    std::vector<std::string> names;
    for (const auto& [name, var] : ps) names.push_back(name);
    for (const auto& name : names) ps.assign(name, rng.normal_tensor(ps.at(name).shape(), stddev));
}

struct Suite {
    Rng rng;
    std::vector<SuiteEntry> entries;

    void run(const std::string& name, const std::function<Variable()>& f, ParamStore& ps,
             GradCheckOptions opts = {}) {
        entries.push_back({name, check_gradients(f, ps, opts)});
    }
};

void layer_checks(Suite& s) {
    Rng& rng = s.rng;
    {
        ParamStore ps;
        ps.add_normal("x", {1, 2, 3, 4, 4}, rng, 1.0f);
        ps.add_normal("w", {3, 2, 3, 3, 3}, rng, 0.3f);
        ps.add_normal("b", {3}, rng, 0.3f);
        Tensor wts = rng.normal_tensor({1, 3, 2, 2, 2});
        s.run("causal_conv3d", [&] {
            return ops::weighted_sum(ops::causal_conv3d(ps.at("x"), ps.at("w"), ps.at("b"), {2, 2, 2}), wts);
        }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("q", {1, 2, 3, 4}, rng, 1.0f);
        ps.add_normal("k", {1, 2, 5, 4}, rng, 1.0f);
        ps.add_normal("v", {1, 2, 5, 4}, rng, 1.0f);
        Tensor wts = rng.normal_tensor({1, 2, 3, 4});
        const std::vector<Real> mask{1, 1, 0, 1, 1, 1, 1, 1, 0, 1};
        s.run("attention", [&] { return ops::weighted_sum(ops::attention(ps.at("q"), ps.at("k"), ps.at("v")), wts); }, ps);
        ParamStore pm;
        pm.add_normal("q", {2, 1, 3, 4}, rng, 1.0f);
        pm.add_normal("k", {2, 1, 5, 4}, rng, 1.0f);
        pm.add_normal("v", {2, 1, 5, 4}, rng, 1.0f);
        Tensor wm = rng.normal_tensor({2, 1, 3, 4});
        s.run("masked attention", [&] {
            return ops::weighted_sum(ops::attention(pm.at("q"), pm.at("k"), pm.at("v"), mask), wm);
        }, pm);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {3, 6}, rng, 1.0f);
        ps.add_normal("s", {6}, rng, 1.0f);
        ps.add_normal("t", {6}, rng, 1.0f);
        Tensor wts = rng.normal_tensor({3, 6});
        s.run("layer_norm", [&] { return ops::weighted_sum(ops::layer_norm(ps.at("x"), ps.at("s"), ps.at("t")), wts); }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {2, 4, 2, 2, 2}, rng, 1.0f);
        ps.add_normal("s", {4}, rng, 1.0f);
        ps.add_normal("t", {4}, rng, 1.0f);
        Tensor wts = rng.normal_tensor({2, 4, 2, 2, 2});
        s.run("channel_norm", [&] { return ops::weighted_sum(ops::channel_norm(ps.at("x"), ps.at("s"), ps.at("t")), wts); }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {2, 3, 5}, rng, 1.0f);
        ps.add_normal("w", {4, 5}, rng, 0.5f);
        ps.add_normal("b", {4}, rng, 0.5f);
        Tensor wts = rng.normal_tensor({2, 3, 4});
        s.run("linear", [&] { return ops::weighted_sum(ops::linear(ps.at("x"), ps.at("w"), ps.at("b")), wts); }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {24}, rng, 1.5f);
        Tensor wts = rng.normal_tensor({24});
        s.run("gelu", [&] { return ops::weighted_sum(ops::gelu(ps.at("x")), wts); }, ps);
        s.run("silu", [&] { return ops::weighted_sum(ops::silu(ps.at("x")), wts); }, ps);
        s.run("sigmoid", [&] { return ops::weighted_sum(ops::sigmoid(ps.at("x")), wts); }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {2, 3, 4}, rng, 1.0f);
        ps.add_normal("y", {2, 3, 4}, rng, 1.0f);
        ps.add_normal("a", {2, 4}, rng, 1.0f);
        ps.add_normal("b", {2, 4}, rng, 1.0f);
        ps.add_normal("table", {6, 4}, rng, 1.0f);
        Tensor wts = rng.normal_tensor({2, 3, 4});
        s.run("modulate and gated_residual", [&] {
            auto m = ops::modulate(ps.at("x"), ps.at("a"), ps.at("b"));
            return ops::weighted_sum(ops::gated_residual(m, ps.at("b"), ps.at("y")), wts);
        }, ps);
        s.run("split and merge heads", [&] {
            auto h = ops::split_heads(ps.at("x"), 2);
            return ops::weighted_sum(ops::merge_heads(ops::attention(h, h, h)), wts);
        }, ps);
        const std::vector<std::int64_t> ids{1, 5, 1, 0, 2, 3};
        const std::vector<Real> rows{1, 0, 1, 1, 1, 0};
        s.run("embedding and mask_rows", [&] {
            auto e = ops::reshape(ops::embedding(ps.at("table"), ids), {2, 3, 4});
            return ops::weighted_sum(ops::mask_rows(ops::add(e, ps.at("y")), rows), wts);
        }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("mu", {10}, rng, 1.0f);
        ps.add_normal("lv", {10}, rng, 0.5f);
        s.run("gaussian_kl", [&] { return ops::gaussian_kl(ps.at("mu"), ps.at("lv")); }, ps);
        s.run("mse", [&] { return ops::mse(ps.at("mu"), ps.at("lv")); }, ps);
        Tensor targets({10}, {1, 0, 1, 1, 0, 0, 1, 0, 1, 0});
        s.run("bce_with_logits", [&] { return ops::bce_with_logits(ps.at("mu"), targets); }, ps);
    }
    {
        ParamStore ps;
        ps.add_normal("x", {1, 2, 3, 2, 2}, rng, 1.0f);
        Tensor wts = rng.normal_tensor({1, 2, 5, 4, 4});
        s.run("upsample_nearest", [&] { return ops::weighted_sum(ops::upsample_nearest(ps.at("x"), 2, 2), wts); }, ps);
        Tensor w2 = rng.normal_tensor({1, 6});
        s.run("spatial_mean", [&] { return ops::weighted_sum(ops::spatial_mean(ps.at("x")), w2); }, ps);
        s.run("spatial_max", [&] { return ops::weighted_sum(ops::spatial_max(ps.at("x")), w2); }, ps);
    }
}

wfvae::VaeConfig toy_vae() {
    wfvae::VaeConfig c;
    c.latent_channels = 2;
    c.base_channels = 2;
    c.channel_mult = {1, 2, 2};
    c.kl_weight = 0.1f;
    return c;
}

dit::DitConfig toy_dit() {
    dit::DitConfig c;
    c.hidden = 8;
    c.blocks = 1;
    c.heads = 2;
    c.latent_channels = 2;
    c.vocab_size = 8;
    c.text_max_len = 3;
    c.text_layers = 1;
    c.mlp_ratio = 2;
    return c;
}

void model_checks(Suite& s) {
    GradCheckOptions opts;
    opts.samples_per_param = 4;
    opts.step = 1e-6;
    {
        wfvae::WfVae vae(toy_vae(), 5);
        ParamStore& ps = vae.params();
        Tensor video = s.rng.normal_tensor({1, 1, 3, 8, 8}, 0.2f);
        for (auto& v : video.values()) v += 0.5f;
        const Tensor eps = s.rng.normal_tensor({1, 2, 2, 2, 2});
        s.run("autoencoder loss (reconstruction + KL)", [&] {
            Variable x(video);
            const auto stats = vae.encode(x);
            return wfvae::vae_loss(x, vae.decode(wfvae::reparameterize(stats, eps)), stats, 0.1f);
        }, ps, opts);
    }
    {
        dit::CrossDit model(toy_dit(), 6);
        ParamStore& ps = model.params();
        randomize(ps, s.rng, 0.3f);
        const Tensor z0 = s.rng.normal_tensor({2, 2, 2, 4, 4});
        const std::vector<dit::PromptTokens> prompts{dit::PromptTokens::from_ids({1, 4}, 3),
                                                     dit::PromptTokens::from_ids({2, 3, 7}, 3)};
        const auto sched = diffusion::NoiseSchedule::linear(1000, 1e-4, 2e-2);
        const std::vector<std::int64_t> steps{17, 640};
        const Tensor noise = s.rng.normal_tensor(z0.shape(), 0.5f);
        s.run("transformer block (self, cross, MLP)", [&] {
            Variable cond = model.encode_text(prompts);
            return ops::weighted_sum(model.denoise(Variable(z0), steps, cond), noise);
        }, ps, opts);
        s.run("diffusion loss (epsilon prediction, CFG dropout)", [&] {
            Rng draw(99);
            const diffusion::TrainDenoiser fn = [&](const Variable& z, const std::vector<std::int64_t>& t,
                                                    const Variable& c) { return model.denoise(z, t, c); };
            return diffusion::diffusion_loss(fn, z0, model.encode_text(prompts), draw, sched, 0.5);
        }, ps, opts);
    }
}

}  // namespace

std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed) {
    Suite s{Rng(seed), {}};
    layer_checks(s);
    model_checks(s);
    return s.entries;
}

}  // namespace angiodit::verify
