#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "angiodit/numerics/autograd.hpp"
#include "angiodit/numerics/params.hpp"

namespace angiodit::dit {

struct DitConfig {
    std::int64_t hidden = 128;
    std::int64_t blocks = 4;
    std::int64_t heads = 4;
    std::array<std::int64_t, 3> patch{1, 2, 2};  // (pt, ph, pw) over the latent
    std::int64_t latent_channels = 4;
    std::int64_t vocab_size = 32;
    std::int64_t text_max_len = 16;
    std::int64_t text_layers = 2;
    std::int64_t mlp_ratio = 4;

    void validate() const;
    // Throws ShapeError unless the patch extents divide the latent extents.
    void check_latent(const Shape& z) const;
    std::int64_t patch_dim() const { return latent_channels * patch[0] * patch[1] * patch[2]; }
};

// Token ids padded to a fixed length; mask is 1 for real tokens and 0 for padding.
struct PromptTokens {
    std::vector<std::int64_t> ids;
    std::vector<Real> mask;

    // Pads or truncates to `length` with id 0 and mask 0.
    static PromptTokens from_ids(const std::vector<std::int64_t>& ids, std::int64_t length);
    // Every position masked: encodes to the unconditional embedding.
    static PromptTokens empty(std::int64_t length);
};

// Sinusoidal embedding of a diffusion step: dim/2 sines then dim/2 cosines
// with frequencies 10000^(-i/(dim/2-1)), i = 0..dim/2-1.
Tensor timestep_features(std::int64_t t, std::int64_t dim);

// Fixed sinusoidal embedding of a (t, h, w) token grid, [gt*gh*gw, dim].
Tensor grid_position_embedding(std::int64_t gt, std::int64_t gh, std::int64_t gw, std::int64_t dim);

class CrossDit {
public:
    CrossDit(DitConfig config, std::uint64_t seed);
    CrossDit(DitConfig config, ParamStore params);

    const DitConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Conditioning sequences [B, L, d]; masked positions are exactly zero.
    Variable encode_text(const std::vector<PromptTokens>& prompts) const;

    // Learned projection of timestep_features, [B, d].
    Variable timestep_embedding(const std::vector<std::int64_t>& steps) const;

    // Predicted noise for z_t [B, C, Tz, Hz, Wz] at per-sample steps, given
    // conditioning [B, L, d]. Output has z_t's shape.
    Variable denoise(const Variable& z_t, const std::vector<std::int64_t>& steps, const Variable& cond) const;

    // [B, C, Tz, Hz, Wz] <-> [B, N, C*pt*ph*pw]
    Variable patchify(const Variable& z) const;
    Variable unpatchify(const Variable& tokens, const Shape& latent_shape) const;

private:
    void build(std::uint64_t seed);
    Variable block(int index, const Variable& x, const Variable& c, const Variable& cond) const;

    DitConfig config_;
    ParamStore params_;
};

}  // namespace angiodit::dit
