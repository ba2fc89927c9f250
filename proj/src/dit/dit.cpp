#include "angiodit/dit/dit.hpp"

#include <cmath>
#include <string>

#include "angiodit/core/error.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::dit {

namespace {

std::string at(const std::string& prefix, std::int64_t i, const std::string& name) {
    return prefix + std::to_string(i) + "." + name;
}

struct Layers {
    const ParamStore& p;

    Variable lin(const std::string& name, const Variable& x) const {
        return ops::linear(x, p.at(name + ".w"), p.at(name + ".b"));
    }
    Variable ln(const std::string& name, const Variable& x) const {
        return ops::layer_norm(x, p.at(name + ".scale"), p.at(name + ".shift"));
    }
};

void add_linear(ParamStore& p, Rng& rng, const std::string& name, std::int64_t out, std::int64_t in,
                bool zero = false) {
    if (zero) p.add_zeros(name + ".w", {out, in});
    else p.add_normal(name + ".w", {out, in}, rng, 1.0f / std::sqrt(static_cast<Real>(in)));
    p.add_zeros(name + ".b", {out});
}

void add_norm(ParamStore& p, const std::string& name, std::int64_t d) {
    p.add_ones(name + ".scale", {d});
    p.add_zeros(name + ".shift", {d});
}

// Sinusoid block for one coordinate: dim/2 sines then dim/2 cosines.
void sinusoid(double pos, std::int64_t dim, Real* out) {
    const std::int64_t half = dim / 2;
    for (std::int64_t i = 0; i < half; ++i) {
        const double freq = half > 1 ? std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
        out[i] = static_cast<Real>(std::sin(pos * freq));
        out[half + i] = static_cast<Real>(std::cos(pos * freq));
    }
}

}  // namespace

void DitConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("dit: " + m); };
    if (hidden < 2 || hidden % 2) fail("hidden width must be even and >= 2");
    if (heads < 1 || hidden % heads) fail("hidden width must be divisible by the head count");
    if (blocks < 1) fail("block count must be >= 1");
    for (auto e : patch)
        if (e < 1) fail("patch extents must be >= 1");
    if (latent_channels < 1) fail("latent_channels must be >= 1");
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (text_max_len < 1) fail("text_max_len must be >= 1");
    if (text_layers < 0) fail("text_layers must be >= 0");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
}

void DitConfig::check_latent(const Shape& z) const {
    if (z.size() != 5 || z[1] != latent_channels || z[2] % patch[0] || z[3] % patch[1] || z[4] % patch[2]) {
        throw ShapeError("dit: latent " + shape_str(z) + " does not fit " + std::to_string(latent_channels) +
                         " channels with patch (" + std::to_string(patch[0]) + "," + std::to_string(patch[1]) +
                         "," + std::to_string(patch[2]) + ")");
    }
}

PromptTokens PromptTokens::from_ids(const std::vector<std::int64_t>& ids, std::int64_t length) {
    PromptTokens p;
    p.ids.assign(static_cast<std::size_t>(length), 0);
    p.mask.assign(static_cast<std::size_t>(length), 0.0f);
    const std::size_t n = std::min(ids.size(), static_cast<std::size_t>(length));
    for (std::size_t i = 0; i < n; ++i) {
        p.ids[i] = ids[i];
        p.mask[i] = 1.0f;
    }
    return p;
}

PromptTokens PromptTokens::empty(std::int64_t length) { return from_ids({}, length); }

Tensor timestep_features(std::int64_t t, std::int64_t dim) {
    if (dim < 2 || dim % 2) throw ShapeError("timestep_features: dim must be even, got " + std::to_string(dim));
    Tensor out({dim});
    sinusoid(static_cast<double>(t), dim, out.data());
    return out;
}

Tensor grid_position_embedding(std::int64_t gt, std::int64_t gh, std::int64_t gw, std::int64_t dim) {
    if (dim % 2) throw ShapeError("grid_position_embedding: dim must be even");
    std::int64_t a = (dim / 3) & ~std::int64_t{1};
    if (a < 2) a = 2;
    const std::int64_t c = dim - 2 * a;
    if (c < 2) throw ShapeError("grid_position_embedding: dim too small");
    Tensor out({gt * gh * gw, dim});
    std::int64_t row = 0;
    for (std::int64_t t = 0; t < gt; ++t)
        for (std::int64_t y = 0; y < gh; ++y)
            for (std::int64_t x = 0; x < gw; ++x, ++row) {
                Real* r = out.data() + row * dim;
                sinusoid(static_cast<double>(t), a, r);
                sinusoid(static_cast<double>(y), a, r + a);
                sinusoid(static_cast<double>(x), c, r + 2 * a);
            }
    return out;
}

CrossDit::CrossDit(DitConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    build(seed);
}

CrossDit::CrossDit(DitConfig config, ParamStore params) : config_(config) {
    config_.validate();
    CrossDit reference(config_, 0);
    for (const auto& [name, v] : reference.params_) {
        if (!params.contains(name)) throw ConfigError("dit: missing parameter " + name);
        if (params.at(name).shape() != v.shape())
            throw ConfigError("dit: parameter " + name + " has shape " + shape_str(params.at(name).shape()) +
                              ", expected " + shape_str(v.shape()));
    }
    if (params.size() != reference.params_.size()) throw ConfigError("dit: unexpected extra parameters");
    params_ = std::move(params);
}

void CrossDit::build(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0xd17);
    const DitConfig& c = config_;
    const std::int64_t d = c.hidden;
    ParamStore& p = params_;

    p.add_normal("text.tok", {c.vocab_size, d}, rng, 1.0f);
    p.add_normal("text.pos", {c.text_max_len, d}, rng, 0.5f);
    for (std::int64_t i = 0; i < c.text_layers; ++i) {
        add_norm(p, at("text.b", i, "ln1"), d);
        for (const char* n : {"q", "k", "v", "o"}) add_linear(p, rng, at("text.b", i, n), d, d);
        add_norm(p, at("text.b", i, "ln2"), d);
        add_linear(p, rng, at("text.b", i, "fc1"), 2 * d, d);
        add_linear(p, rng, at("text.b", i, "fc2"), d, 2 * d);
    }
    add_norm(p, "text.ln_f", d);

    add_linear(p, rng, "t_embed.fc1", d, d);
    add_linear(p, rng, "t_embed.fc2", d, d);
    add_linear(p, rng, "patch_embed", d, c.patch_dim());

    for (std::int64_t i = 0; i < c.blocks; ++i) {
        add_linear(p, rng, at("blocks.", i, "ada"), 9 * d, d, true);
        for (const char* n : {"self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v", "cross.o"})
            add_linear(p, rng, at("blocks.", i, n), d, d);
        add_linear(p, rng, at("blocks.", i, "mlp.fc1"), c.mlp_ratio * d, d);
        add_linear(p, rng, at("blocks.", i, "mlp.fc2"), d, c.mlp_ratio * d);
    }
    add_linear(p, rng, "final.ada", 2 * d, d, true);
    add_linear(p, rng, "final.out", c.patch_dim(), d, true);
}

Variable CrossDit::encode_text(const std::vector<PromptTokens>& prompts) const {
    const DitConfig& c = config_;
    const std::int64_t b = static_cast<std::int64_t>(prompts.size()), len = c.text_max_len, d = c.hidden;
    if (b == 0) throw ShapeError("encode_text: no prompts");
    std::vector<std::int64_t> ids;
    std::vector<Real> mask;
    for (const auto& pr : prompts) {
        if (static_cast<std::int64_t>(pr.ids.size()) != len || pr.mask.size() != pr.ids.size()) {
            throw ShapeError("encode_text: prompts must have " + std::to_string(len) + " ids and mask entries");
        }
        for (auto id : pr.ids) {
            if (id < 0 || id >= c.vocab_size) {
                throw ShapeError("encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(c.vocab_size));
            }
        }
        ids.insert(ids.end(), pr.ids.begin(), pr.ids.end());
        mask.insert(mask.end(), pr.mask.begin(), pr.mask.end());
    }
    const Layers L{params_};
    Variable x = ops::reshape(ops::embedding(params_.at("text.tok"), ids), {b, len, d});
    x = ops::add_broadcast(x, params_.at("text.pos"));
    const std::int64_t heads = c.heads;
    for (std::int64_t i = 0; i < c.text_layers; ++i) {
        Variable h = L.ln(at("text.b", i, "ln1"), x);
        Variable q = ops::split_heads(L.lin(at("text.b", i, "q"), h), heads);
        Variable k = ops::split_heads(L.lin(at("text.b", i, "k"), h), heads);
        Variable v = ops::split_heads(L.lin(at("text.b", i, "v"), h), heads);
        x = ops::add(x, L.lin(at("text.b", i, "o"), ops::merge_heads(ops::attention(q, k, v, mask))));
        h = L.ln(at("text.b", i, "ln2"), x);
        x = ops::add(x, L.lin(at("text.b", i, "fc2"), ops::gelu(L.lin(at("text.b", i, "fc1"), h))));
    }
    return ops::mask_rows(L.ln("text.ln_f", x), mask);
}

Variable CrossDit::timestep_embedding(const std::vector<std::int64_t>& steps) const {
    const std::int64_t d = config_.hidden;
    Tensor feats({static_cast<std::int64_t>(steps.size()), d});
    for (std::size_t i = 0; i < steps.size(); ++i) {
        Tensor f = timestep_features(steps[i], d);
        std::copy_n(f.data(), d, feats.data() + static_cast<std::int64_t>(i) * d);
    }
    const Layers L{params_};
    return L.lin("t_embed.fc2", ops::silu(L.lin("t_embed.fc1", Variable(std::move(feats)))));
}

Variable CrossDit::patchify(const Variable& z) const {
    config_.check_latent(z.shape());
    const Shape& s = z.shape();
    const auto [pt, ph, pw] = config_.patch;
    const std::int64_t b = s[0], ch = s[1], t = s[2], h = s[3], w = s[4];
    const std::int64_t gt = t / pt, gh = h / ph, gw = w / pw, n = gt * gh * gw, pd = config_.patch_dim();
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(b * n * pd));
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t a = 0; a < gt; ++a)
            for (std::int64_t y = 0; y < gh; ++y)
                for (std::int64_t x = 0; x < gw; ++x)
                    for (std::int64_t c = 0; c < ch; ++c)
                        for (std::int64_t i = 0; i < pt; ++i)
                            for (std::int64_t j = 0; j < ph; ++j)
                                for (std::int64_t k = 0; k < pw; ++k)
                                    idx.push_back((((bi * ch + c) * t + a * pt + i) * h + y * ph + j) * w + x * pw + k);
    return ops::gather(z, std::move(idx), {b, n, pd});
}

Variable CrossDit::unpatchify(const Variable& tokens, const Shape& latent_shape) const {
    config_.check_latent(latent_shape);
    const auto [pt, ph, pw] = config_.patch;
    const Shape& s = latent_shape;
    const std::int64_t b = s[0], ch = s[1], t = s[2], h = s[3], w = s[4];
    const std::int64_t gh = h / ph, gw = w / pw, n = (t / pt) * gh * gw, pd = config_.patch_dim();
    if (tokens.shape() != Shape{b, n, pd}) {
        throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match latent " + shape_str(s));
    }
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(b * ch * t * h * w));
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t c = 0; c < ch; ++c)
            for (std::int64_t tt = 0; tt < t; ++tt)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        const std::int64_t token = ((tt / pt) * gh + y / ph) * gw + x / pw;
                        const std::int64_t within = ((c * pt + tt % pt) * ph + y % ph) * pw + x % pw;
                        idx.push_back((bi * n + token) * pd + within);
                    }
    return ops::gather(tokens, std::move(idx), s);
}

Variable CrossDit::block(int index, const Variable& x_in, const Variable& c, const Variable& cond) const {
    const Layers L{params_};
    const std::int64_t d = config_.hidden, heads = config_.heads;
    const std::string pre = "blocks." + std::to_string(index) + ".";
    Variable mod = L.lin(pre + "ada", ops::silu(c));
    auto chunk = [&](int k) { return ops::slice_last(mod, k * d, d); };
    auto attend = [&](const std::string& name, const Variable& q_src, const Variable& kv_src) {
        Variable q = ops::split_heads(L.lin(pre + name + ".q", q_src), heads);
        Variable k = ops::split_heads(L.lin(pre + name + ".k", kv_src), heads);
        Variable v = ops::split_heads(L.lin(pre + name + ".v", kv_src), heads);
        return L.lin(pre + name + ".o", ops::merge_heads(ops::attention(q, k, v)));
    };

    Variable x = x_in;
    Variable h = ops::modulate(ops::layer_norm(x, {}, {}), chunk(0), chunk(1));
    x = ops::gated_residual(x, chunk(2), attend("self", h, h));
    h = ops::modulate(ops::layer_norm(x, {}, {}), chunk(3), chunk(4));
    x = ops::gated_residual(x, chunk(5), attend("cross", h, cond));
    h = ops::modulate(ops::layer_norm(x, {}, {}), chunk(6), chunk(7));
    Variable f = L.lin(pre + "mlp.fc2", ops::gelu(L.lin(pre + "mlp.fc1", h)));
    return ops::gated_residual(x, chunk(8), f);
}

Variable CrossDit::denoise(const Variable& z_t, const std::vector<std::int64_t>& steps, const Variable& cond) const {
    const DitConfig& cfg = config_;
    cfg.check_latent(z_t.shape());
    const Shape& s = z_t.shape();
    const std::int64_t b = s[0], d = cfg.hidden;
    if (static_cast<std::int64_t>(steps.size()) != b) throw ShapeError("denoise: need one step per batch element");
    if (cond.shape().size() != 3 || cond.dim(0) != b || cond.dim(2) != d) {
        throw ShapeError("denoise: conditioning must be [" + std::to_string(b) + ", L, " + std::to_string(d) +
                         "], got " + shape_str(cond.shape()));
    }
    const Layers L{params_};
    const auto [pt, ph, pw] = cfg.patch;
    Variable x = L.lin("patch_embed", patchify(z_t));
    x = ops::add_broadcast(x, Variable(grid_position_embedding(s[2] / pt, s[3] / ph, s[4] / pw, d)));
    Variable c = timestep_embedding(steps);
    for (std::int64_t i = 0; i < cfg.blocks; ++i) x = block(static_cast<int>(i), x, c, cond);
    Variable mod = L.lin("final.ada", ops::silu(c));
    Variable h = ops::modulate(ops::layer_norm(x, {}, {}), ops::slice_last(mod, 0, d), ops::slice_last(mod, d, d));
    return unpatchify(L.lin("final.out", h), s);
}

}  // namespace angiodit::dit
