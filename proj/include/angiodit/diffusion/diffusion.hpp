#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/dit/dit.hpp"
#include "angiodit/numerics/optim.hpp"
#include "angiodit/numerics/random.hpp"
#include "angiodit/wfvae/wfvae.hpp"

namespace angiodit::diffusion {

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    // Linearly spaced betas from beta_start to beta_end over `steps` entries.
    static NoiseSchedule linear(std::int64_t steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

    std::int64_t steps() const { return static_cast<std::int64_t>(betas.size()); }
    double alpha_bar(std::int64_t t) const;
};

// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps for one step shared by the batch.
Tensor q_sample(const Tensor& z0, std::int64_t t, const Tensor& eps, const NoiseSchedule& sched);
// Per-sample steps along the leading axis.
Tensor q_sample(const Tensor& z0, const std::vector<std::int64_t>& t, const Tensor& eps, const NoiseSchedule& sched);

using TrainDenoiser =
    std::function<Variable(const Variable& z_t, const std::vector<std::int64_t>& t, const Variable& cond)>;
using SampleDenoiser =
    std::function<Tensor(const Tensor& z_t, const std::vector<std::int64_t>& t, const Tensor& cond)>;

// Random quantities drawn by one diffusion_loss call.
struct LossDraw {
    std::vector<std::int64_t> steps;
    Tensor eps;
    std::vector<bool> unconditional;
};

// Epsilon-prediction objective on a batch z0 [B, ...] with conditioning
// [B, L, d]. Each sample draws t uniformly and eps ~ N(0, 1); with
// probability p_uncond its conditioning is replaced by zeros, which is the
// encoding of an all-masked prompt.
Variable diffusion_loss(const TrainDenoiser& model, const Tensor& z0, const Variable& cond, Rng& rng,
                        const NoiseSchedule& sched, double p_uncond = 0.1, LossDraw* draw = nullptr);

// Descending uniform-stride sub-schedule of `steps` entries ending at 0.
std::vector<std::int64_t> ddim_timesteps(std::int64_t train_steps, std::int64_t steps);

struct SamplerOptions {
    std::int64_t steps = 50;
    double guidance = 3.0;
};

// Deterministic DDIM (eta = 0) from an explicit starting latent z_T [B, ...].
// cond and uncond are [B, L, d]; uncond is only used when guidance > 0.
Tensor ddim_sample_from(const SampleDenoiser& model, Tensor z, const Tensor& cond, const Tensor& uncond,
                        const SamplerOptions& options, const NoiseSchedule& sched);
// Same, starting from z ~ N(0, 1) of the given shape drawn from rng.
Tensor ddim_sample(const SampleDenoiser& model, const Shape& shape, const Tensor& cond, const Tensor& uncond,
                   const SamplerOptions& options, Rng& rng, const NoiseSchedule& sched);

// Everything generation needs: the autoencoder, the denoiser, the noise
// schedule and the latent normalization.
struct ModelBundle {
    std::shared_ptr<const wfvae::WfVae> vae;
    std::shared_ptr<const dit::CrossDit> dit;
    NoiseSchedule schedule = NoiseSchedule::linear();
    // Diffusion runs on mu * latent_scale.
    Real latent_scale = 1.0f;
    // Latent extent of one video: [Cz, Tz, Hz, Wz].
    Shape latent_shape;
};

struct GenerateOptions {
    SamplerOptions sampler;
    // Latent tile for decoding; zero extents mean one tile over the frame.
    wfvae::TileSpec tile{0, 0};
    std::int64_t overlap = 0;
};

SampleDenoiser make_sampler(const dit::CrossDit& model);

VideoClip generate(const ModelBundle& bundle, const dit::PromptTokens& prompt, const GenerateOptions& options,
                   Rng& rng);

// 1 / standard deviation of every entry of the given latents.
Real latent_scale_from(const std::vector<Tensor>& latents);

struct DitTrainOptions {
    std::int64_t steps = 1000;
    std::int64_t batch_size = 8;
    double p_uncond = 0.1;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    std::function<void(std::int64_t, double)> on_step;
};

// Trains the denoiser on scaled latents [Cz, Tz, Hz, Wz] paired with prompts.
std::vector<double> train_dit(dit::CrossDit& model, const std::vector<Tensor>& latents,
                              const std::vector<dit::PromptTokens>& prompts, const NoiseSchedule& sched,
                              const DitTrainOptions& options);

}  // namespace angiodit::diffusion
