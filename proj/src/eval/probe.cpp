#include "angiodit/eval/probe.hpp"

#include <algorithm>
#include <cmath>

#include "angiodit/core/error.hpp"
#include "angiodit/eval/metrics.hpp"
#include "angiodit/numerics/ops.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit::eval {

namespace {

constexpr const char* kConvNames[3] = {"probe.c1", "probe.c2", "probe.c3"};

bool contains(const std::vector<dataset::Lesion>& set, dataset::Lesion l) {
    return std::find(set.begin(), set.end(), l) != set.end();
}

void require_clip(const ProbeConfig& c, const VideoClip& v) {
    if (v.data.rank() != 4 || v.channels() != 1 || v.frames() != c.frames || v.height() != c.height ||
        v.width() != c.width)
        throw ShapeError("lesion probe: expected a [1, " + std::to_string(c.frames) + ", " + std::to_string(c.height) +
                         ", " + std::to_string(c.width) + "] clip, got " + shape_str(v.data.shape()));
}

}  // namespace

void ProbeConfig::validate() const {
    if (lesions.empty()) throw ConfigError("probe: at least one lesion term required");
    for (std::size_t i = 0; i < lesions.size(); ++i)
        for (std::size_t j = i + 1; j < lesions.size(); ++j)
            if (lesions[i] == lesions[j]) throw ConfigError("probe: duplicate lesion term");
    if (frames < 1) throw ConfigError("probe: frames must be positive");
    if (height % 8 != 0 || width % 8 != 0 || height < 8 || width < 8)
        throw ConfigError("probe: height and width must be positive multiples of 8");
    for (auto ch : channels)
        if (ch < 1) throw ConfigError("probe: channel counts must be positive");
}

std::vector<dataset::Lesion> ProbeReading::present(const ProbeConfig& config) const {
    std::vector<dataset::Lesion> out;
    for (std::size_t i = 0; i < config.lesions.size(); ++i)
        if (lesion_prob[i] >= 0.5) out.push_back(config.lesions[i]);
    return out;
}

LesionProbe::LesionProbe(ProbeConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    build(seed);
}

LesionProbe::LesionProbe(ProbeConfig config, ParamStore params) : config_(std::move(config)) {
    config_.validate();
    build(0);
    for (const auto& [name, var] : params_) {
        if (!params.contains(name)) throw ConfigError("lesion probe: missing parameter " + name);
        params_.assign(name, params.at(name).value());
    }
    if (params.size() != params_.size()) throw ConfigError("lesion probe: unexpected extra parameters");
    trained_ = true;
}

void LesionProbe::build(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 0x9b0b);
    std::int64_t in = 1;
    for (int i = 0; i < 3; ++i) {
        const std::int64_t out = config_.channels[static_cast<std::size_t>(i)];
        const Real std = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(in * 27)));
        params_.add_normal(std::string(kConvNames[i]) + ".w", {out, in, 3, 3, 3}, rng, std);
        params_.add_zeros(std::string(kConvNames[i]) + ".b", {out});
        in = out;
    }
    const std::int64_t features = in * config_.frames;
    const auto outputs = static_cast<std::int64_t>(config_.lesions.size()) + 1;
    const Real std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(2 * features)));
    params_.add_normal("probe.mean_head.w", {outputs, features}, rng, std);
    params_.add_normal("probe.max_head.w", {outputs, features}, rng, std);
    params_.add_zeros("probe.head.b", {outputs});
}

Variable LesionProbe::logits(const Variable& batch) const {
    Variable h = batch;
    for (int i = 0; i < 3; ++i) {
        const std::string n = kConvNames[i];
        h = ops::silu(ops::causal_conv3d(h, params_.at(n + ".w"), params_.at(n + ".b"), {1, 2, 2}));
    }
    return ops::add(ops::linear(ops::spatial_mean(h), params_.at("probe.mean_head.w"), params_.at("probe.head.b")),
                    ops::linear(ops::spatial_max(h), params_.at("probe.max_head.w"), Variable()));
}

ProbeReading LesionProbe::read(const VideoClip& video) const {
    require_clip(config_, video);
    NoGradGuard guard;
    const Tensor z = logits(Variable(video.as_batch())).value();
    ProbeReading r;
    const auto l = config_.lesions.size();
    for (std::size_t i = 0; i < l; ++i) r.lesion_prob.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z[static_cast<std::int64_t>(i)]))));
    r.left_prob = 1.0 / (1.0 + std::exp(-static_cast<double>(z[static_cast<std::int64_t>(l)])));
    return r;
}

std::vector<double> LesionProbe::train(const std::vector<ProbeExample>& examples, const ProbeTrainOptions& options) {
    if (examples.empty()) throw ConfigError("lesion probe: no training examples");
    if (options.batch_size < 1 || options.steps < 0) throw ConfigError("lesion probe: bad batch size or step count");
    for (const auto& e : examples) require_clip(config_, e.video);
    const auto l = static_cast<std::int64_t>(config_.lesions.size());
    const std::int64_t per = examples.front().video.data.numel();
    Rng rng = Rng::derive(options.seed, 0x9b0c);
    Adam adam(options.adam);
    std::vector<double> history;
    for (std::int64_t step = 0; step < options.steps; ++step) {
        Tensor batch({options.batch_size, 1, config_.frames, config_.height, config_.width});
        Tensor targets({options.batch_size, l + 1});
        for (std::int64_t b = 0; b < options.batch_size; ++b) {
            const auto& e = examples[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(examples.size())))];
            std::copy_n(e.video.data.data(), per, batch.data() + b * per);
            for (std::int64_t i = 0; i < l; ++i)
                targets[b * (l + 1) + i] = contains(e.lesions, config_.lesions[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
            targets[b * (l + 1) + l] = e.laterality == dataset::Laterality::Left ? 1.0f : 0.0f;
        }
        Variable loss = ops::bce_with_logits(logits(Variable(std::move(batch))), targets);
        const double value = loss.scalar();
        if (!std::isfinite(value)) throw NumericError("lesion probe: non-finite loss at step " + std::to_string(step));
        adam.step(params_, backward(loss, params_));
        history.push_back(value);
    }
    trained_ = true;
    return history;
}

std::vector<double> LesionProbe::per_lesion_accuracy(const std::vector<ProbeExample>& examples) const {
    std::vector<double> correct(config_.lesions.size(), 0.0);
    if (examples.empty()) return correct;
    for (const auto& e : examples) {
        const ProbeReading r = read(e.video);
        for (std::size_t i = 0; i < config_.lesions.size(); ++i)
            if ((r.lesion_prob[i] >= 0.5) == contains(e.lesions, config_.lesions[i])) correct[i] += 1;
    }
    for (auto& c : correct) c /= static_cast<double>(examples.size());
    return correct;
}

AlignmentResult lesion_probe_alignment(const std::vector<VideoClip>& videos,
                                       const std::vector<std::vector<dataset::Lesion>>& prompts,
                                       const LesionProbe& probe) {
    if (videos.size() != prompts.size()) throw ShapeError("lesion_probe_alignment: videos and prompts differ in count");
    if (videos.empty()) throw ShapeError("lesion_probe_alignment: no videos");
    const auto& lesions = probe.config().lesions;
    AlignmentResult out;
    double agree = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
        const ProbeReading r = probe.read(videos[v]);
        double best_in = -1, best_out = -1;
        for (std::size_t i = 0; i < lesions.size(); ++i) {
            const bool named = contains(prompts[v], lesions[i]);
            if ((r.lesion_prob[i] >= 0.5) == named) agree += 1;
            double& best = named ? best_in : best_out;
            best = std::max(best, r.lesion_prob[i]);
        }
        if (best_in >= 0 && best_out >= 0) {
            ++out.trials;
            if (best_in > best_out) ++out.hits;
        }
    }
    out.alignment = agree / static_cast<double>(videos.size() * lesions.size());
    out.p_value = binomial_upper_tail(out.hits, out.trials, 0.5);
    return out;
}

}  // namespace angiodit::eval
