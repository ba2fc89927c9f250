#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "angiodit/core/video_clip.hpp"
#include "angiodit/numerics/autograd.hpp"
#include "angiodit/numerics/optim.hpp"
#include "angiodit/numerics/params.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::wfvae {

struct VaeConfig {
    std::int64_t in_channels = 1;
    std::int64_t latent_channels = 4;
    std::int64_t temporal_compression = 2;
    std::int64_t spatial_compression = 4;
    std::int64_t base_channels = 8;
    // Width multiplier per resolution, finest first; one entry per stage plus one.
    std::vector<std::int64_t> channel_mult{1, 2, 4};
    // Resolutions (counted from the finest downsampled one) that receive an
    // energy-flow injection.
    int wavelet_levels = 2;
    Real kl_weight = 1e-4f;

    // Throws ConfigError when the fields are inconsistent.
    void validate() const;
    int stages() const;           // log2(spatial_compression)
    int temporal_stages() const;  // log2(temporal_compression)
    bool stage_halves_time(int stage) const { return stage <= temporal_stages(); }
    std::int64_t channels_at(int level) const;

    // [Cz, Tz, Hz, Wz] for a T x H x W input; throws ShapeError when the
    // extents do not fit the compression factors.
    Shape latent_shape(std::int64_t t, std::int64_t h, std::int64_t w) const;
    // [T, H, W] decoded from Tz x Hz x Wz.
    Shape video_extent(std::int64_t tz, std::int64_t hz, std::int64_t wz) const;
};

struct LatentStats {
    Variable mu;      // [B, Cz, Tz, Hz, Wz]
    Variable logvar;  // same shape, clamped to [-30, 20]
};

inline constexpr Real kLogvarMin = -30.0f;
inline constexpr Real kLogvarMax = 20.0f;

struct TileSpec {
    std::int64_t height = 8;  // latent rows per tile
    std::int64_t width = 8;   // latent columns per tile
};

class WfVae {
public:
    WfVae(VaeConfig config, std::uint64_t seed);
    // Adopts existing parameters (e.g. from a checkpoint); names must match.
    WfVae(VaeConfig config, ParamStore params);

    const VaeConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // x: [B, C, T, H, W] with pixels in [0, 1].
    LatentStats encode(const Variable& x) const;
    LatentStats encode(const VideoClip& clip) const;

    // z: [B, Cz, Tz, Hz, Wz] -> [B, C, T, H, W] in [0, 1].
    Variable decode(const Variable& z) const;
    VideoClip decode_clip(const Tensor& z) const;

    // Spatially tiled decode of one latent [Cz, Tz, Hz, Wz] or [1, Cz, ...].
    // Each tile is decoded with `overlap` extra latent rows/columns on every
    // side, which are cropped away before stitching. Tiles run on up to
    // `workers` threads.
    VideoClip decode_tiled(const Tensor& z, TileSpec tile, std::int64_t overlap, int workers = 1) const;

    // Latent rows/columns beyond which a decoder output pixel cannot see.
    std::int64_t decoder_receptive_radius() const;

    // Last latent frame whose receptive field lies within input frames <= tau.
    std::int64_t last_latent_frame_within(std::int64_t tau) const;

private:
    void build(std::uint64_t seed);
    void check_input(const Shape& s) const;
    void check_latent(const Shape& s) const;

    VaeConfig config_;
    ParamStore params_;
};

// z = mu + exp(logvar / 2) * eps with eps drawn from `rng` (no graph).
Tensor reparameterize(const LatentStats& stats, Rng& rng);
// Differentiable form with caller-supplied noise.
Variable reparameterize(const LatentStats& stats, const Tensor& eps);

// mean((recon - video)^2) + beta * mean(KL(N(mu, sigma^2) || N(0, 1))).
Variable vae_loss(const Variable& video, const Variable& recon, const LatentStats& stats, Real beta);

struct VaeTrainOptions {
    std::int64_t steps = 200;
    std::int64_t batch_size = 4;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    // Called after every step with (step, loss); may be empty.
    std::function<void(std::int64_t, double)> on_step;
};

// Trains on clips of identical shape [C, T, H, W]. Returns the loss of every step.
std::vector<double> train_vae(WfVae& vae, const std::vector<Tensor>& clips, const VaeTrainOptions& options);

}  // namespace angiodit::wfvae
