#include "angiodit/diffusion/diffusion.hpp"

#include <cmath>
#include <string>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"

namespace angiodit::diffusion {

namespace {

Tensor stack(const std::vector<const Tensor*>& parts) {
    Shape s = parts.front()->shape();
    const std::int64_t per = parts.front()->numel();
    s.insert(s.begin(), static_cast<std::int64_t>(parts.size()));
    Tensor out(s);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        require_same_shape(*parts[i], *parts.front(), "stack");
        std::copy_n(parts[i]->data(), per, out.data() + static_cast<std::int64_t>(i) * per);
    }
    return out;
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    Shape s = a.shape();
    Shape sb = b.shape();
    sb[0] = s[0];
    if (sb != s) throw ShapeError("concat_batch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    s[0] += b.dim(0);
    Tensor out(s);
    std::copy_n(a.data(), a.numel(), out.data());
    std::copy_n(b.data(), b.numel(), out.data() + a.numel());
    return out;
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(std::int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule: need at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
        throw ConfigError("noise schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (std::int64_t i = 0; i < steps; ++i) {
        const double frac = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
        const double beta = beta_start + frac * (beta_end - beta_start);
        prod *= 1.0 - beta;
        s.betas[static_cast<std::size_t>(i)] = beta;
        s.alpha_bars[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

double NoiseSchedule::alpha_bar(std::int64_t t) const {
    if (t < 0 || t >= steps()) {
        throw ShapeError("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
    }
    return alpha_bars[static_cast<std::size_t>(t)];
}

Tensor q_sample(const Tensor& z0, std::int64_t t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(z0, eps, "q_sample");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(z0.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<Real>(a * z0[i] + b * eps[i]);
    return out;
}

Tensor q_sample(const Tensor& z0, const std::vector<std::int64_t>& t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(z0, eps, "q_sample");
    if (z0.rank() < 1 || static_cast<std::int64_t>(t.size()) != z0.dim(0))
        throw ShapeError("q_sample: need one step per batch element");
    const std::int64_t per = z0.numel() / z0.dim(0);
    Tensor out(z0.shape());
    for (std::int64_t b = 0; b < z0.dim(0); ++b) {
        const double ab = sched.alpha_bar(t[static_cast<std::size_t>(b)]);
        const double x = std::sqrt(ab), y = std::sqrt(1.0 - ab);
        for (std::int64_t i = b * per; i < (b + 1) * per; ++i) out[i] = static_cast<Real>(x * z0[i] + y * eps[i]);
    }
    return out;
}

Variable diffusion_loss(const TrainDenoiser& model, const Tensor& z0, const Variable& cond, Rng& rng,
                        const NoiseSchedule& sched, double p_uncond, LossDraw* draw) {
    if (z0.rank() < 2) throw ShapeError("diffusion_loss: z0 needs a batch axis");
    const std::int64_t b = z0.dim(0);
    if (cond.shape().size() != 3 || cond.dim(0) != b)
        throw ShapeError("diffusion_loss: conditioning must be [B, L, d] with B = " + std::to_string(b));
    LossDraw local;
    LossDraw& d = draw ? *draw : local;
    d.steps.resize(static_cast<std::size_t>(b));
    d.unconditional.assign(static_cast<std::size_t>(b), false);
    for (std::int64_t i = 0; i < b; ++i) d.steps[static_cast<std::size_t>(i)] = rng.index(sched.steps());
    d.eps = rng.normal_tensor(z0.shape());
    const std::int64_t len = cond.dim(1);
    std::vector<Real> keep(static_cast<std::size_t>(b * len), 1.0f);
    bool any_dropped = false;
    for (std::int64_t i = 0; i < b; ++i) {
        if (rng.bernoulli(p_uncond)) {
            d.unconditional[static_cast<std::size_t>(i)] = true;
            any_dropped = true;
            std::fill_n(keep.begin() + i * len, len, 0.0f);
        }
    }
    Variable c = any_dropped ? ops::mask_rows(cond, keep) : cond;
    Variable z_t(q_sample(z0, d.steps, d.eps, sched));
    Variable pred = model(z_t, d.steps, c);
    return ops::mse(pred, Variable(d.eps));
}

std::vector<std::int64_t> ddim_timesteps(std::int64_t train_steps, std::int64_t steps) {
    if (steps < 1) throw ConfigError("ddim: step count must be >= 1");
    if (steps > train_steps)
        throw ConfigError("ddim: " + std::to_string(steps) + " steps exceed the " + std::to_string(train_steps) +
                          " training steps");
    std::vector<std::int64_t> out(static_cast<std::size_t>(steps));
    const std::int64_t stride = train_steps / steps;
    for (std::int64_t i = 0; i < steps; ++i) out[static_cast<std::size_t>(steps - 1 - i)] = i * stride;
    return out;
}

Tensor ddim_sample_from(const SampleDenoiser& model, Tensor z, const Tensor& cond, const Tensor& uncond,
                        const SamplerOptions& options, const NoiseSchedule& sched) {
    if (!(options.guidance >= 0.0)) throw ConfigError("ddim: guidance must be >= 0");
    const std::vector<std::int64_t> ts = ddim_timesteps(sched.steps(), options.steps);
    const std::int64_t b = z.dim(0);
    const bool guided = options.guidance > 0.0;
    Tensor both_cond = guided ? concat_batch(cond, uncond) : Tensor();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::int64_t t = ts[i];
        Tensor eps;
        if (guided) {
            Tensor out = model(concat_batch(z, z), std::vector<std::int64_t>(static_cast<std::size_t>(2 * b), t), both_cond);
            eps = Tensor(z.shape());
            const std::int64_t n = z.numel();
            for (std::int64_t j = 0; j < n; ++j) {
                const double ec = out[j], eu = out[n + j];
                eps[j] = static_cast<Real>(eu + options.guidance * (ec - eu));
            }
        } else {
            eps = model(z, std::vector<std::int64_t>(static_cast<std::size_t>(b), t), cond);
        }
        require_same_shape(eps, z, "ddim model output");
        const double ab = sched.alpha_bar(t);
        const double ab_next = i + 1 < ts.size() ? sched.alpha_bar(ts[i + 1]) : 1.0;
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double na = std::sqrt(ab_next), nb = std::sqrt(1.0 - ab_next);
        for (std::int64_t j = 0; j < z.numel(); ++j) {
            const double x0 = (z[j] - sb * eps[j]) / sa;
            z[j] = static_cast<Real>(na * x0 + nb * eps[j]);
        }
        if (!all_finite(z)) throw NumericError("ddim: non-finite latent at step " + std::to_string(t));
    }
    return z;
}

Tensor ddim_sample(const SampleDenoiser& model, const Shape& shape, const Tensor& cond, const Tensor& uncond,
                   const SamplerOptions& options, Rng& rng, const NoiseSchedule& sched) {
    return ddim_sample_from(model, rng.normal_tensor(shape), cond, uncond, options, sched);
}

SampleDenoiser make_sampler(const dit::CrossDit& model) {
    return [&model](const Tensor& z, const std::vector<std::int64_t>& t, const Tensor& cond) {
        NoGradGuard guard;
        return model.denoise(Variable(z), t, Variable(cond)).value();
    };
}

VideoClip generate(const ModelBundle& bundle, const dit::PromptTokens& prompt, const GenerateOptions& options,
                   Rng& rng) {
    if (!bundle.vae || !bundle.dit) throw ConfigError("generate: model bundle is incomplete");
    if (bundle.latent_shape.size() != 4) throw ConfigError("generate: latent shape must be [Cz, Tz, Hz, Wz]");
    if (!(bundle.latent_scale > 0.0f)) throw ConfigError("generate: latent scale must be positive");
    NoGradGuard guard;
    const dit::CrossDit& model = *bundle.dit;
    const Tensor cond = model.encode_text({prompt}).value();
    const Tensor uncond = model.encode_text({dit::PromptTokens::empty(model.config().text_max_len)}).value();
    Shape shape = bundle.latent_shape;
    shape.insert(shape.begin(), 1);
    Tensor z = ddim_sample(make_sampler(model), shape, cond, uncond, options.sampler, rng, bundle.schedule);
    for (auto& v : z.values()) v /= bundle.latent_scale;
    wfvae::TileSpec tile = options.tile;
    if (tile.height <= 0) tile.height = shape[3];
    if (tile.width <= 0) tile.width = shape[4];
    const bool single = tile.height >= shape[3] && tile.width >= shape[4];
    if (single) return bundle.vae->decode_clip(z);
    return bundle.vae->decode_tiled(z, tile, options.overlap);
}

Real latent_scale_from(const std::vector<Tensor>& latents) {
    double n = 0, s = 0, sq = 0;
    for (const auto& t : latents)
        for (Real v : t.values()) {
            n += 1;
            s += v;
        }
    if (n < 2) throw ConfigError("latent_scale_from: need at least two latent values");
    const double mean = s / n;
    for (const auto& t : latents)
        for (Real v : t.values()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / n);
    if (!(sd > 0.0)) throw NumericError("latent_scale_from: latents have zero spread");
    return static_cast<Real>(1.0 / sd);
}

std::vector<double> train_dit(dit::CrossDit& model, const std::vector<Tensor>& latents,
                              const std::vector<dit::PromptTokens>& prompts, const NoiseSchedule& sched,
                              const DitTrainOptions& options) {
    if (latents.empty() || latents.size() != prompts.size())
        throw ConfigError("train_dit: need one prompt per latent and at least one latent");
    if (options.batch_size < 1 || options.steps < 0) throw ConfigError("train_dit: bad batch size or step count");
    Rng rng = Rng::derive(options.seed, 0xd1f);
    Adam adam(options.adam);
    const TrainDenoiser fn = [&model](const Variable& z, const std::vector<std::int64_t>& t, const Variable& c) {
        return model.denoise(z, t, c);
    };
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(options.steps));
    for (std::int64_t step = 0; step < options.steps; ++step) {
        std::vector<const Tensor*> zs;
        std::vector<dit::PromptTokens> ps;
        for (std::int64_t b = 0; b < options.batch_size; ++b) {
            const auto k = static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(latents.size())));
            zs.push_back(&latents[k]);
            ps.push_back(prompts[k]);
        }
        Tensor z0 = stack(zs);
        Variable cond = model.encode_text(ps);
        Variable loss = diffusion_loss(fn, z0, cond, rng, sched, options.p_uncond);
        const double value = loss.scalar();
        if (!std::isfinite(value)) throw NumericError("train_dit: non-finite loss at step " + std::to_string(step));
        GradientMap grads = backward(loss, model.params());
        adam.step(model.params(), grads);
        history.push_back(value);
        if (options.on_step) options.on_step(step, value);
    }
    return history;
}

}  // namespace angiodit::diffusion
