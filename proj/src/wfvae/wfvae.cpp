#include "angiodit/wfvae/wfvae.hpp"

#include <cmath>
#include <string>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/parallel.hpp"
#include "angiodit/wavelet/haar.hpp"

namespace angiodit::wfvae {

namespace {

bool power_of_two(std::int64_t v) { return v >= 1 && (v & (v - 1)) == 0; }

int log2_exact(std::int64_t v) {
    int n = 0;
    while ((std::int64_t{1} << n) < v) ++n;
    return n;
}

std::string key(const std::string& prefix, int index, const std::string& name) {
    return prefix + std::to_string(index) + "." + name;
}

// Channels [c0, c0+n) of an NCTHW variable.
Variable channel_range(const Variable& x, std::int64_t c0, std::int64_t n) {
    const Shape& s = x.shape();
    const std::int64_t inner = s[2] * s[3] * s[4];
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(s[0] * n * inner));
    for (std::int64_t b = 0; b < s[0]; ++b)
        for (std::int64_t c = c0; c < c0 + n; ++c) {
            const std::int64_t base = (b * s[1] + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) idx.push_back(base + i);
        }
    return ops::gather(x, std::move(idx), {s[0], n, s[2], s[3], s[4]});
}

class Builder {
public:
    Builder(ParamStore& store, Rng& rng) : store_(store), rng_(rng) {}

    void conv(const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k, Real gain = 1.0f) {
        const Real stddev = gain / std::sqrt(static_cast<Real>(in * k * k * k));
        store_.add_normal(name + ".w", {out, in, k, k, k}, rng_, stddev);
        store_.add_zeros(name + ".b", {out});
    }
    void norm(const std::string& name, std::int64_t channels) {
        store_.add_ones(name + ".scale", {channels});
        store_.add_zeros(name + ".shift", {channels});
    }

private:
    ParamStore& store_;
    Rng& rng_;
};

struct Net {
    const ParamStore& p;

    Variable conv(const std::string& name, const Variable& x, ops::Stride3 stride = {}) const {
        return ops::causal_conv3d(x, p.at(name + ".w"), p.at(name + ".b"), stride);
    }
    Variable norm_act(const std::string& name, const Variable& x) const {
        return ops::silu(ops::channel_norm(x, p.at(name + ".scale"), p.at(name + ".shift")));
    }
    // x + conv(silu(norm(x)))
    Variable residual(const std::string& prefix, const Variable& x) const {
        return ops::add(x, conv(prefix + "res", norm_act(prefix + "res_norm", x)));
    }
};

wavelet::Axes stage_axes(const VaeConfig& c, int stage) { return {c.stage_halves_time(stage), true, true}; }

}  // namespace

void VaeConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("vae: " + m); };
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (latent_channels < 1) fail("latent_channels must be >= 1");
    if (base_channels < 1) fail("base_channels must be >= 1");
    if (!power_of_two(temporal_compression)) fail("temporal_compression must be a power of two");
    if (!power_of_two(spatial_compression) || spatial_compression < 2)
        fail("spatial_compression must be a power of two >= 2");
    if (temporal_compression > spatial_compression)
        fail("temporal_compression may not exceed spatial_compression");
    if (static_cast<int>(channel_mult.size()) != stages() + 1)
        fail("channel_mult needs " + std::to_string(stages() + 1) + " entries");
    for (auto m : channel_mult)
        if (m < 1) fail("channel_mult entries must be >= 1");
    if (wavelet_levels < 1 || wavelet_levels > stages())
        fail("wavelet_levels must lie in [1, " + std::to_string(stages()) + "]");
    if (!(kl_weight >= 0.0f)) fail("kl_weight must be >= 0");
}

int VaeConfig::stages() const { return log2_exact(spatial_compression); }
int VaeConfig::temporal_stages() const { return log2_exact(temporal_compression); }

std::int64_t VaeConfig::channels_at(int level) const {
    return base_channels * channel_mult[static_cast<std::size_t>(level)];
}

Shape VaeConfig::latent_shape(std::int64_t t, std::int64_t h, std::int64_t w) const {
    if (t < 1 || (t - 1) % temporal_compression != 0 || h % spatial_compression != 0 ||
        w % spatial_compression != 0 || h < 1 || w < 1) {
        throw ShapeError("wfvae: input extents T=" + std::to_string(t) + " H=" + std::to_string(h) +
                         " W=" + std::to_string(w) + " need (T-1) divisible by " +
                         std::to_string(temporal_compression) + " and H, W divisible by " +
                         std::to_string(spatial_compression));
    }
    return {latent_channels, (t - 1) / temporal_compression + 1, h / spatial_compression,
            w / spatial_compression};
}

Shape VaeConfig::video_extent(std::int64_t tz, std::int64_t hz, std::int64_t wz) const {
    return {(tz - 1) * temporal_compression + 1, hz * spatial_compression, wz * spatial_compression};
}

WfVae::WfVae(VaeConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    build(seed);
}

WfVae::WfVae(VaeConfig config, ParamStore params) : config_(std::move(config)) {
    config_.validate();
    WfVae reference(config_, 0);
    for (const auto& [name, v] : reference.params_) {
        if (!params.contains(name)) throw ConfigError("wfvae: missing parameter " + name);
        if (params.at(name).shape() != v.shape())
            throw ConfigError("wfvae: parameter " + name + " has shape " + shape_str(params.at(name).shape()) +
                              ", expected " + shape_str(v.shape()));
    }
    if (params.size() != reference.params_.size()) throw ConfigError("wfvae: unexpected extra parameters");
    params_ = std::move(params);
}

void WfVae::build(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0x5fae);
    Builder b(params_, rng);
    const VaeConfig& c = config_;
    const int S = c.stages();
    const std::int64_t cin = c.in_channels;

    b.conv("enc.conv_in", c.channels_at(0), cin, 3);
    for (int s = 1; s <= S; ++s) {
        const std::string pre = "enc.s";
        b.conv(key(pre, s, "down"), c.channels_at(s), c.channels_at(s - 1), 3);
        b.norm(key(pre, s, "down_norm"), c.channels_at(s));
        if (s <= c.wavelet_levels) b.conv(key(pre, s, "flow"), c.channels_at(s), cin, 1);
        b.norm(key(pre, s, "res_norm"), c.channels_at(s));
        b.conv(key(pre, s, "res"), c.channels_at(s), c.channels_at(s), 3, 0.5f);
    }
    b.norm("enc.out_norm", c.channels_at(S));
    b.conv("enc.conv_out", 2 * c.latent_channels, c.channels_at(S), 3);
    b.conv("enc.flow_out", 2 * c.latent_channels, cin, 1);

    b.conv("dec.conv_in", c.channels_at(S), c.latent_channels, 3);
    b.conv("dec.flow_in", cin, c.latent_channels, 1);
    for (int s = S; s >= 1; --s) {
        const std::string pre = "dec.s";
        if (s <= c.wavelet_levels) b.conv(key(pre, s, "flow"), c.channels_at(s), cin, 1);
        b.norm(key(pre, s, "res_norm"), c.channels_at(s));
        b.conv(key(pre, s, "res"), c.channels_at(s), c.channels_at(s), 3, 0.5f);
        b.conv(key(pre, s, "up"), c.channels_at(s - 1), c.channels_at(s), 3);
        b.norm(key(pre, s, "up_norm"), c.channels_at(s - 1));
    }
    b.norm("dec.out_norm", c.channels_at(0));
    b.conv("dec.conv_out", cin, c.channels_at(0), 3);
    b.conv("dec.flow_out", cin, cin, 1);
}

void WfVae::check_input(const Shape& s) const {
    if (s.size() != 5 || s[1] != config_.in_channels) {
        throw ShapeError("wfvae: encoder input must be [B, " + std::to_string(config_.in_channels) +
                         ", T, H, W], got " + shape_str(s));
    }
    config_.latent_shape(s[2], s[3], s[4]);
}

void WfVae::check_latent(const Shape& s) const {
    if (s.size() != 5 || s[1] != config_.latent_channels) {
        throw ShapeError("wfvae: latent must be [B, " + std::to_string(config_.latent_channels) +
                         ", Tz, Hz, Wz], got " + shape_str(s));
    }
}

LatentStats WfVae::encode(const Variable& x) const {
    check_input(x.shape());
    const VaeConfig& c = config_;
    const Net net{params_};
    const int S = c.stages();

    // Low-pass pyramid of the input: the energy-flow signal.
    Tensor low = x.value();
    Variable h = net.conv("enc.conv_in", x);
    for (int s = 1; s <= S; ++s) {
        const bool halve_t = c.stage_halves_time(s);
        low = wavelet::haar_lowpass(low, stage_axes(c, s), true);
        h = net.conv(key("enc.s", s, "down"), h, {halve_t ? 2 : 1, 2, 2});
        h = net.norm_act(key("enc.s", s, "down_norm"), h);
        if (s <= c.wavelet_levels) h = ops::add(h, net.conv(key("enc.s", s, "flow"), Variable(low)));
        h = net.residual(key("enc.s", s, ""), h);
    }
    Variable stats = net.conv("enc.conv_out", net.norm_act("enc.out_norm", h));
    stats = ops::add(stats, net.conv("enc.flow_out", Variable(low)));
    LatentStats out;
    out.mu = channel_range(stats, 0, c.latent_channels);
    out.logvar = ops::clamp(channel_range(stats, c.latent_channels, c.latent_channels), kLogvarMin, kLogvarMax);
    return out;
}

LatentStats WfVae::encode(const VideoClip& clip) const { return encode(Variable(clip.as_batch())); }

Variable WfVae::decode(const Variable& z) const {
    check_latent(z.shape());
    const VaeConfig& c = config_;
    const Net net{params_};
    const int S = c.stages();

    Variable low = net.conv("dec.flow_in", z);
    Variable h = net.conv("dec.conv_in", z);
    for (int s = S; s >= 1; --s) {
        if (s <= c.wavelet_levels) h = ops::add(h, net.conv(key("dec.s", s, "flow"), low));
        h = net.residual(key("dec.s", s, ""), h);
        const bool halve_t = c.stage_halves_time(s);
        h = ops::upsample_nearest(h, halve_t ? 2 : 1, 2);
        h = net.norm_act(key("dec.s", s, "up_norm"), net.conv(key("dec.s", s, "up"), h));
        low = wavelet::haar_lowpass_synthesis(low, stage_axes(c, s), true);
    }
    Variable logits = net.conv("dec.conv_out", net.norm_act("dec.out_norm", h));
    return ops::sigmoid(ops::add(logits, net.conv("dec.flow_out", low)));
}

VideoClip WfVae::decode_clip(const Tensor& z) const {
    Tensor batch = z;
    if (batch.rank() == 4) batch.reshape({1, z.dim(0), z.dim(1), z.dim(2), z.dim(3)});
    if (batch.rank() != 5 || batch.dim(0) != 1) throw ShapeError("decode_clip: expected one latent, got " + shape_str(z.shape()));
    NoGradGuard guard;
    Tensor v = decode(Variable(std::move(batch))).value();
    const Shape& s = v.shape();
    v.reshape({s[1], s[2], s[3], s[4]});
    return VideoClip(std::move(v));
}

std::int64_t WfVae::decoder_receptive_radius() const {
    // Conv radii in latent units, summed along the decoder's spatial path.
    const int S = config_.stages();
    double r = 1.0;  // conv_in
    for (int s = S; s >= 1; --s) {
        const double here = 1.0 / static_cast<double>(std::int64_t{1} << (S - s));
        const double finer = here / 2.0;
        r += here;           // residual conv
        r += finer + finer;  // nearest upsample, then the up conv
    }
    r += 1.0 / static_cast<double>(std::int64_t{1} << S);  // conv_out
    return static_cast<std::int64_t>(std::ceil(r)) + 1;
}

std::int64_t WfVae::last_latent_frame_within(std::int64_t tau) const {
    return tau / config_.temporal_compression;
}

VideoClip WfVae::decode_tiled(const Tensor& z, TileSpec tile, std::int64_t overlap, int workers) const {
    Shape s = z.shape();
    if (s.size() == 5) {
        if (s[0] != 1) throw ShapeError("decode_tiled: one latent at a time, got " + shape_str(s));
        s.erase(s.begin());
    }
    if (s.size() != 4 || s[0] != config_.latent_channels)
        throw ShapeError("decode_tiled: latent must be [Cz, Tz, Hz, Wz], got " + shape_str(z.shape()));
    if (tile.height < 1 || tile.width < 1) throw ShapeError("decode_tiled: tile extents must be positive");
    const std::int64_t radius = decoder_receptive_radius();
    if (overlap < radius) {
        throw ShapeError("decode_tiled: overlap " + std::to_string(overlap) +
                         " is below the decoder receptive radius of " + std::to_string(radius) +
                         " latent pixels; tiles would not match the untiled decode");
    }
    const std::int64_t cz = s[0], tz = s[1], hz = s[2], wz = s[3];
    const std::int64_t cs = config_.spatial_compression;
    const Shape ext = config_.video_extent(tz, hz, wz);
    const std::int64_t cin = config_.in_channels, tv = ext[0], hv = ext[1], wv = ext[2];
    Tensor out({cin, tv, hv, wv});

    const std::int64_t rows = (hz + tile.height - 1) / tile.height;
    const std::int64_t cols = (wz + tile.width - 1) / tile.width;
    parallel_for(
        rows * cols,
        [&](std::int64_t index) {
            NoGradGuard guard;
            const std::int64_t y0 = (index / cols) * tile.height, x0 = (index % cols) * tile.width;
            const std::int64_t y1 = std::min(hz, y0 + tile.height), x1 = std::min(wz, x0 + tile.width);
            const std::int64_t py0 = std::max<std::int64_t>(0, y0 - overlap), px0 = std::max<std::int64_t>(0, x0 - overlap);
            const std::int64_t py1 = std::min(hz, y1 + overlap), px1 = std::min(wz, x1 + overlap);
            const std::int64_t ph = py1 - py0, pw = px1 - px0;
            Tensor part({1, cz, tz, ph, pw});
            for (std::int64_t c = 0; c < cz; ++c)
                for (std::int64_t t = 0; t < tz; ++t)
                    for (std::int64_t y = 0; y < ph; ++y) {
                        const Real* src = z.data() + ((c * tz + t) * hz + py0 + y) * wz + px0;
                        std::copy_n(src, pw, part.data() + ((c * tz + t) * ph + y) * pw);
                    }
            Tensor dec = decode(Variable(std::move(part))).value();
            const std::int64_t dh = ph * cs, dw = pw * cs;
            const std::int64_t oy = (y0 - py0) * cs, ox = (x0 - px0) * cs;
            const std::int64_t nh = (y1 - y0) * cs, nw = (x1 - x0) * cs;
            for (std::int64_t c = 0; c < cin; ++c)
                for (std::int64_t t = 0; t < tv; ++t)
                    for (std::int64_t y = 0; y < nh; ++y) {
                        const Real* src = dec.data() + ((c * tv + t) * dh + oy + y) * dw + ox;
                        std::copy_n(src, nw, out.data() + ((c * tv + t) * hv + y0 * cs + y) * wv + x0 * cs);
                    }
        },
        std::max(1, workers));
    return VideoClip(std::move(out));
}

Tensor reparameterize(const LatentStats& stats, Rng& rng) {
    const Tensor& mu = stats.mu.value();
    const Tensor& lv = stats.logvar.value();
    require_same_shape(mu, lv, "reparameterize");
    Tensor z(mu.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = mu[i] + std::exp(lv[i] * 0.5f) * rng.normal();
    return z;
}

Variable reparameterize(const LatentStats& stats, const Tensor& eps) {
    require_same_shape(stats.mu.value(), eps, "reparameterize");
    const Tensor& lv = stats.logvar.value();
    Tensor sigma_eps(eps.shape());
    for (std::int64_t i = 0; i < eps.numel(); ++i) sigma_eps[i] = std::exp(lv[i] * 0.5f) * eps[i];
    // d(sigma * eps)/d(logvar) = 0.5 * sigma * eps.
    Variable noise = make_result(sigma_eps, {stats.logvar}, [](Node& self) {
        if (Tensor* g = self.input_grad(0)) {
            for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += 0.5f * self.value[i] * self.grad[i];
        }
    });
    return ops::add(stats.mu, noise);
}

Variable vae_loss(const Variable& video, const Variable& recon, const LatentStats& stats, Real beta) {
    if (!(beta >= 0.0f)) throw ConfigError("vae_loss: beta must be >= 0");
    require_same_shape(video.value(), recon.value(), "vae_loss");
    Variable rec = ops::mse(recon, video);
    if (beta == 0.0f) return rec;
    return ops::add(rec, ops::scale(ops::gaussian_kl(stats.mu, stats.logvar), beta));
}

std::vector<double> train_vae(WfVae& vae, const std::vector<Tensor>& clips, const VaeTrainOptions& options) {
    if (clips.empty()) throw ConfigError("train_vae: no training clips");
    if (options.batch_size < 1 || options.steps < 0) throw ConfigError("train_vae: bad batch size or step count");
    const Shape clip_shape = clips.front().shape();
    if (clip_shape.size() != 4) throw ShapeError("train_vae: clips must be [C, T, H, W]");
    for (const auto& c : clips) require_same_shape(c, clips.front(), "train_vae clips");

    Rng rng = Rng::derive(options.seed, 0x7a1e);
    Adam adam(options.adam);
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(options.steps));
    const std::int64_t per = clips.front().numel();
    for (std::int64_t step = 0; step < options.steps; ++step) {
        Tensor batch({options.batch_size, clip_shape[0], clip_shape[1], clip_shape[2], clip_shape[3]});
        for (std::int64_t b = 0; b < options.batch_size; ++b) {
            const Tensor& src = clips[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(clips.size())))];
            std::copy_n(src.data(), per, batch.data() + b * per);
        }
        Variable x(std::move(batch));
        LatentStats stats = vae.encode(x);
        Tensor eps = rng.normal_tensor(stats.mu.shape());
        Variable recon = vae.decode(reparameterize(stats, eps));
        Variable loss = vae_loss(x, recon, stats, vae.config().kl_weight);
        const double value = loss.scalar();
        if (!std::isfinite(value)) throw NumericError("train_vae: non-finite loss at step " + std::to_string(step));
        GradientMap grads = backward(loss, vae.params());
        adam.step(vae.params(), grads);
        history.push_back(value);
        if (options.on_step) options.on_step(step, value);
    }
    return history;
}

}  // namespace angiodit::wfvae
